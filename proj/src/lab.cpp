#include "mfclab/lab.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <random>

#include "mfclab/hopflax.hpp"
#include "mfclab/metrics.hpp"

namespace mfclab {

namespace {

enum class PType { integer, number, int_list, num_list, str_list };

struct ParamSpec {
    std::string name;
    PType type;
    json def;
    double lo = -1e300, hi = 1e300;
    std::vector<std::string> choices;

    ParamSpec(std::string n, PType t, json d, double l = -1e300, double h = 1e300, std::vector<std::string> c = {})
        : name(std::move(n)), type(t), def(std::move(d)), lo(l), hi(h), choices(std::move(c)) {}
};

using Runner = std::function<void(const json& p, std::uint64_t seed, ArtifactSet& out, std::vector<Check>& checks)>;

struct KindInfo {
    std::vector<ParamSpec> params;
    Runner run;
};

const std::map<std::string, KindInfo>& registry();

std::vector<double> pow2(int lo, int hi) {
    std::vector<double> v;
    for (int k = lo; k <= hi; ++k) v.push_back(std::ldexp(1.0, k));
    return v;
}

std::vector<int> ipow2(int lo, int hi) {
    std::vector<int> v;
    for (int k = lo; k <= hi; ++k) v.push_back(1 << k);
    return v;
}

void validate_value(const ParamSpec& s, const json& v) {
    auto where = "params." + s.name;
    auto range = [&](double x) {
        if (!(x >= s.lo && x <= s.hi))
            throw SchemaError(fmt::format("{}: {} outside [{}, {}]", where, num(x), num(s.lo), num(s.hi)));
    };
    switch (s.type) {
        case PType::integer:
            if (!v.is_number_integer()) throw SchemaError(where + ": expected an integer");
            range(v.get<double>());
            break;
        case PType::number:
            if (!v.is_number()) throw SchemaError(where + ": expected a number");
            range(v.get<double>());
            break;
        case PType::int_list:
        case PType::num_list:
            if (!v.is_array() || v.empty()) throw SchemaError(where + ": expected a non-empty list");
            for (const auto& e : v) {
                if (s.type == PType::int_list ? !e.is_number_integer() : !e.is_number())
                    throw SchemaError(where + (s.type == PType::int_list ? ": expected integers" : ": expected numbers"));
                range(e.get<double>());
            }
            break;
        case PType::str_list:
            if (!v.is_array() || v.empty()) throw SchemaError(where + ": expected a non-empty list");
            for (const auto& e : v) {
                if (!e.is_string()) throw SchemaError(where + ": expected strings");
                if (std::find(s.choices.begin(), s.choices.end(), e.get<std::string>()) == s.choices.end())
                    throw SchemaError(where + ": unknown value '" + e.get<std::string>() + "'");
            }
            break;
    }
}

json fill_params(const std::string& kind, const json& given) {
    const auto& info = registry().at(kind);
    if (!given.is_null() && !given.is_object()) throw SchemaError("params: expected an object");
    json out = json::object();
    for (const auto& s : info.params) {
        if (given.is_object() && given.contains(s.name)) {
            validate_value(s, given.at(s.name));
            out[s.name] = given.at(s.name);
        } else {
            out[s.name] = s.def;
        }
    }
    if (given.is_object())
        for (const auto& [k, v] : given.items())
            if (!out.contains(k)) throw SchemaError("params." + k + ": unknown field for kind " + kind);
    return out;
}

Check within(std::string name, double measured, double lo, double hi) {
    return {std::move(name), measured >= lo && measured <= hi, measured, "in", lo, hi};
}
Check at_most(std::string name, double measured, double bound) {
    return {std::move(name), measured <= bound, measured, "<=", bound, bound};
}
Check below(std::string name, double measured, double bound) {
    return {std::move(name), measured < bound, measured, "<", bound, bound};
}
Check at_least(std::string name, double measured, double bound) {
    return {std::move(name), measured >= bound, measured, ">=", bound, bound};
}

template <class T>
std::vector<T> list(const json& p, const char* key) {
    return p.at(key).get<std::vector<T>>();
}

std::vector<double> centers(int N) {
    std::vector<double> x(N);
    for (int i = 0; i < N; ++i) x[i] = (i + 0.5) / N;
    return x;
}

EmpiricalMeasure line_atoms(const std::vector<double>& x) {
    return make_empirical(Domain::euclid(1), x, std::vector<double>(x.size(), 1.0 / x.size()));
}

GridDensity density(int R, const std::function<double(double)>& f) {
    std::vector<double> m(R);
    double s = 0;
    for (int i = 0; i < R; ++i) s += m[i] = f((i + 0.5) / R);
    for (double& v : m) v /= s;
    return make_grid(Domain::torus(1), {R}, m);
}

GridDensity random_density(int R, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::vector<double> m(R);
    double s = 0;
    for (double& v : m) s += v = u(rng);
    for (double& v : m) v /= s;
    return make_grid(Domain::torus(1), {R}, m);
}

TerminalCost cost_named(const std::string& name) {
    if (name == "zero") return TerminalCost::zero();
    if (name == "mean_quadratic") return TerminalCost::mean_quadratic({1.0});
    return TerminalCost::d1_to_reference(lebesgue_cube(1));
}

// ---- runners ----

void run_zero_noise(const json& p, std::uint64_t seed, ArtifactSet& out, std::vector<Check>& checks) {
    double t = p.at("t"), T = p.at("T");
    int extra = p.at("extra_atoms");
    auto Ns = list<int>(p, "Ns");
    for (const auto& name : list<std::string>(p, "costs")) {
        auto G = cost_named(name);
        std::vector<double> vn(Ns.size()), rel(Ns.size());
        parallel_for(Ns.size(), [&](std::size_t k) {
            int N = Ns[k];
            std::mt19937_64 rng(derive_seed(seed, fmt::format("zero_noise/{}/{}", name, N)));
            std::uniform_real_distribution<double> u(0, 1);
            std::vector<double> x(N);
            for (double& v : x) v = u(rng);
            auto v = vN_deterministic(t, x, G, T, derive_seed(seed, fmt::format("vN/{}/{}", name, N)));
            auto r = u_relaxed_atomic(t, line_atoms(x), G, T, N + extra,
                                      derive_seed(seed, fmt::format("relaxed/{}/{}", name, N)), &v.argmin.atoms);
            vn[k] = v.value;
            rel[k] = r.value;
        });
        std::string csv = "N,vN,relaxed,excess\n";
        double worst = -1e300;
        for (std::size_t k = 0; k < Ns.size(); ++k) {
            csv += fmt::format("{},{},{},{}\n", Ns[k], num(vn[k]), num(rel[k]), num(rel[k] - vn[k]));
            worst = std::max(worst, rel[k] - vn[k]);
        }
        out.text("ordering_" + name + ".csv", csv);
        checks.push_back(at_most("relaxed <= vN + 1e-9 (" + name + ")", worst, 1e-9));
    }
}

void run_gap_rate(const json& p, std::uint64_t, ArtifactSet& out, std::vector<Check>& checks) {
    double t = p.at("t"), T = p.at("T");
    auto G = TerminalCost::d1_to_reference(lebesgue_cube(1));
    std::vector<std::vector<double>> xs;
    for (int N : list<int>(p, "Ns")) xs.push_back(grid_center_config(N, 1).atoms);
    auto rep = gap_report(t, xs, G, T);
    std::string csv = "N,gap,bound,vN,u_upper\n";
    double worst = 1e300;
    for (const auto& r : rep.rows) {
        double bound = 1.0 / (4.0 * r.N) - 1.0 / (12.0 * r.N * r.N);
        csv += fmt::format("{},{},{},{},{}\n", r.N, num(r.gap), num(bound), num(r.vN), num(r.u_upper));
        worst = std::min(worst, r.gap - bound);
    }
    out.text("gap_rate.csv", csv);
    out.text("gap_rate.json", to_json(rep.table).dump(2) + "\n");
    auto anchor = gap_report(t, {centers(1)}, G, T);
    checks.push_back(at_least("gap - (1/(4N) - 1/(12N^2)) rowwise", worst, -1e-6));
    checks.push_back(within("fitted gap slope", rep.table.slope, -1.15, -0.85));
    checks.push_back(at_least("N = 1 gap", anchor.rows[0].gap, 1.0 / 6 - 1e-9));
}

void run_convexity(const json& p, std::uint64_t seed, ArtifactSet& out, std::vector<Check>& checks) {
    double t = p.at("t"), T = p.at("T"), b = p.at("b"), xbar = p.at("xbar");
    // min over y of |y - b|^2 + |y - xbar|^2 / (2 (T - t))
    double expect = (xbar - b) * (xbar - b) / (1.0 + 2.0 * (T - t));
    auto G = TerminalCost::mean_quadratic({b});
    auto Ns = list<int>(p, "Ns");
    auto reps = list<int>(p, "reps");
    std::string csv = "N,vN,replication_spread\n";
    double err = 0.0, spread = 0.0;
    for (int N : Ns) {
        auto x = centers(N);
        for (double& v : x) v += xbar - 0.5;
        double v = vN_deterministic(t, x, G, T, derive_seed(seed, "vN/" + std::to_string(N))).value;
        auto r = replication_monotonicity(t, x, G, T, reps);
        auto [lo, hi] = std::minmax_element(r.begin(), r.end());
        csv += fmt::format("{},{},{}\n", N, num(v), num(*hi - *lo));
        err = std::max(err, std::fabs(v - expect));
        spread = std::max(spread, *hi - *lo);
    }
    out.text("convexity_equality.csv", csv);
    checks.push_back(at_most(fmt::format("max |vN - {}|", num(expect)), err, 1e-6));
    checks.push_back(at_most("replication spread", spread, 1e-6));
}

void run_viscosity(const json& p, std::uint64_t, ArtifactSet& out, std::vector<Check>& checks) {
    ProblemData d;
    d.T = p.at("T");
    d.G.lin = TrigFunction{0, {p.at("g_amplitude").get<double>()}, {}};
    int R = p.at("resolution");
    auto tab = viscosity_rate_probe(d, p.at("N"), list<double>(p, "etas"), R);
    out.text("viscosity_rate.csv", rate_table_csv(tab, "eta", "sup_error"));
    out.text("viscosity_rate.json", to_json(tab).dump(2) + "\n");
    checks.push_back(at_most("grid h", 1.0 / R, 1.0 / 256));
    checks.push_back(within("fitted slope", tab.slope, 0.4, 0.6));
}

ProblemData decay_data(const json& p) {
    ProblemData d;
    d.T = p.at("T");
    d.eta = p.at("eta");
    d.A0 = p.at("A0");
    d.G.lin = TrigFunction{0, {0.3}, {0.2}};
    d.G.mom = TrigFunction{0, {}, {1.0}};
    d.G.kappa = 1.0;
    return d;
}

void run_gradient_decay(const json& p, std::uint64_t, ArtifactSet& out, std::vector<Check>& checks) {
    auto d = decay_data(p);
    int R = p.at("resolution");
    std::string csv = "N,N_grad,grad,hess\n";
    double lo = 1e300, hi = 0;
    for (int N : list<int>(p, "Ns")) {
        auto V = solve_hjb_nparticle(d, N, R);
        auto g = hjb_gradient_probe(V);
        csv += fmt::format("{},{},{},{}\n", N, num(N * g.grad), num(g.grad), num(g.hess));
        lo = std::min(lo, N * g.grad);
        hi = std::max(hi, N * g.grad);
        if (N == 1) out.tensor("value_N1.vt", V, "hjb N=1");
    }
    out.text("gradient_decay.csv", csv);
    checks.push_back(at_most("max/min of N max_i |D_i V|", hi / lo, 2.0));
}

void run_tv(const json& p, std::uint64_t seed, ArtifactSet& out, std::vector<Check>& checks) {
    int triples = p.at("triples"), R = p.at("resolution"), steps = p.at("steps");
    double T = p.at("T"), sigma0 = p.at("sigma0");
    ProblemData d;
    d.eta = p.at("eta");
    d.A = TrigFunction{0.05, {}, {0.03}};
    std::vector<double> ratio(triples);
    parallel_for(triples, [&](std::size_t i) {
        std::mt19937_64 rng(derive_seed(seed, "tv/" + std::to_string(i)));
        auto a = random_density(R, rng), b = random_density(R, rng);
        auto c = FeedbackControl::zero(0, T, 3, 16, 1.0);
        std::uniform_real_distribution<double> u(-1, 1);
        for (double& v : c.values) v = u(rng);
        auto path = CommonNoisePath::sample(0, T, steps, sigma0, derive_seed(seed, "tv/path/" + std::to_string(i)));
        ratio[i] = tv_contraction_probe(a, b, c, d, path);
    });
    std::string csv = "triple,ratio\n";
    double worst = 0;
    for (int i = 0; i < triples; ++i) {
        csv += fmt::format("{},{}\n", i, num(ratio[i]));
        worst = std::max(worst, ratio[i]);
    }
    out.text("tv_contraction.csv", csv);
    checks.push_back(at_most("worst TV ratio", worst, 1.0 + 1e-8));
}

void run_commutator(const json& p, std::uint64_t seed, ArtifactSet& out, std::vector<Check>& checks) {
    int R = p.at("resolution");
    double horizon = p.at("horizon");
    auto m0 = density(R, [](double x) { return 0.2 + (x > 0.4 && x < 0.45 ? 16.0 : 0.0); });
    auto path = CommonNoisePath::sample(0, 0.5, p.at("steps"), p.at("sigma0"), derive_seed(seed, "commutator/path"));
    TrigFunction alpha0{0.5, {}, {0.3}};
    ProblemData cst;
    cst.A = TrigFunction::constant(0.1);
    auto c = commutator_probe(alpha0, 0.1, cst, path, horizon, m0);
    ProblemData var;
    var.A = TrigFunction{0.1, {}, {0.05}};
    auto deltas = list<double>(p, "deltas");
    std::vector<CommutatorResult> res(deltas.size());
    parallel_for(deltas.size(), [&](std::size_t k) { res[k] = commutator_probe(alpha0, deltas[k], var, path, horizon, m0); });
    std::string csv = "delta,probe,probe_over_delta,scheme_error\n";
    double lo = 1e300, hi = 0;
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        double q = res[k].probe / deltas[k];
        csv += fmt::format("{},{},{},{}\n", num(deltas[k]), num(res[k].probe), num(q), num(res[k].scheme_error));
        lo = std::min(lo, q);
        hi = std::max(hi, q);
    }
    out.text("commutator.csv", csv);
    out.text("commutator_constant.json",
             json{{"delta", 0.1}, {"probe", c.probe}, {"scheme_error", c.scheme_error}}.dump(2) + "\n");
    checks.push_back(at_most("constant A: probe / scheme error", c.probe / c.scheme_error, 2.0));
    checks.push_back(at_most("variable A: max/min probe/delta", hi / lo, 2.0));
}

void run_sampling(const json& p, std::uint64_t seed, ArtifactSet& out, std::vector<Check>& checks) {
    auto t1 = empirical_rate_mc(uniform_grid(Domain::torus(1), 1), list<int>(p, "d1_Ns"), p.at("d1_trials"),
                                derive_seed(seed, "sampling/d1"));
    auto t3 = empirical_rate_mc(uniform_grid(Domain::torus(3), 1), list<int>(p, "d3_Ns"), p.at("d3_trials"),
                                derive_seed(seed, "sampling/d3"));
    out.text("sampling_d1.csv", rate_table_csv(t1, "N", "mean_d1"));
    out.text("sampling_d3.csv", rate_table_csv(t3, "N", "mean_d1_paired"));
    out.text("sampling_rate.json", json{{"d1", to_json(t1)}, {"d3", to_json(t3)}}.dump(2) + "\n");
    checks.push_back(within("d = 1 slope", t1.slope, -0.6, -0.4));
    checks.push_back(within("d = 3 paired slope", t3.slope, -1.0 / 3 - 0.12, -1.0 / 3 + 0.12));
}

void run_quantization(const json& p, std::uint64_t, ArtifactSet& out, std::vector<Check>& checks) {
    int d = p.at("d");
    auto Ns = list<int>(p, "Ns");
    RateTable tab;
    std::string csv = "N,value,lower_bound\n";
    double gap = 1e300, v1 = -1;
    for (int N : Ns) {
        auto q = d1_quantization_value(N, d);
        tab.rows.push_back({double(N), q.value, 0.0});
        csv += fmt::format("{},{},{}\n", N, num(q.value), num(q.lower_bound));
        gap = std::min(gap, q.value - q.lower_bound);
        if (N == 1) v1 = q.value;
    }
    out.text("quantization.csv", csv);
    if (d == 1 && v1 >= 0) checks.push_back(within("v_1", v1, 0.25 - 1e-12, 0.25 + 1e-12));
    checks.push_back(at_least("value - lower bound", gap, -1e-12));
    if (tab.rows.size() >= 3) {
        fit_in_place(tab);
        checks.push_back(within("fitted slope", tab.slope, -1.0 / d - 0.15, -1.0 / d + 0.15));
    }
    out.text("quantization.json", to_json(tab).dump(2) + "\n");
}

void run_chain(const json& p, std::uint64_t seed, ArtifactSet& out, std::vector<Check>& checks) {
    int cells = p.at("cells"), res = p.at("lattice_resolution"), Z = p.at("z_resolution"), s = p.at("s_star");
    auto nu0 = density(cells, [](double x) { return 1 + 0.8 * std::cos(2 * kPi * x); });
    auto base = simplex_lattice(cells, res);

    auto pairs = random_pairs(base, p.at("random_pairs"), derive_seed(seed, "chain/pairs"));
    auto mp = mode_pairs(p.at("mode_cells"), p.at("mode_freq"));
    pairs.insert(pairs.end(), mp.begin(), mp.end());
    auto deltas = list<double>(p, "deltas");
    auto M = mollification_inequality_probe(pairs, deltas, s);
    std::string mcsv = "delta,c_d1,c_tv,c_self\n";
    for (const auto& r : M.rows) mcsv += fmt::format("{},{},{},{}\n", num(r.delta), num(r.c_d1), num(r.c_tv), num(r.c_self));
    out.text("mollification.csv", mcsv);
    double dev = 0;
    for (auto get : {+[](const MollificationRow& r) { return r.c_d1; }, +[](const MollificationRow& r) { return r.c_tv; },
                     +[](const MollificationRow& r) { return r.c_self; }}) {
        double mean = 0;
        for (const auto& r : M.rows) mean += get(r) / M.rows.size();
        for (const auto& r : M.rows) dev = std::max(dev, std::fabs(get(r) / mean - 1));
    }

    double sd = p.at("supconv_delta");
    auto L = std::make_shared<MeasureLattice>(base);
    close_under_mollification(*L, MollifierKernel::gaussian(sd), L->size());
    auto src = tabulate(L, {0.0}, d1_source(nu0), "d1 to nu0");
    out.field("source_field.vt", src);
    auto f = mollified_value(change_of_variables(src, Z), MollifierKernel::gaussian(sd));
    auto S = supconv_error_probe(f, list<double>(p, "supconv_eps"), s);
    out.text("supconv.csv", rate_table_csv(S.table, "eps", "sup_error"));

    RegConfig cfg;
    cfg.s_star = s;
    cfg.z_resolution = Z;
    cfg.c_cfg = p.at("c_cfg");
    auto C = chain_budget_probe(base, d1_source(nu0), deltas, list<double>(p, "thetas"), list<double>(p, "lambdas"), cfg);
    std::string ccsv = "delta,eps,lambda,error,predictor,in_regime\n";
    for (const auto& r : C.rows)
        ccsv += fmt::format("{},{},{},{},{},{}\n", num(r.delta), num(r.eps), num(r.lambda), num(r.error),
                            num(r.predictor), r.in_regime ? 1 : 0);
    out.text("chain.csv", ccsv);
    out.text("regularization_chain.json",
             json{{"supconv", to_json(S.table)},
                  {"supconv_threshold", S.threshold},
                  {"chain_fitted", C.fitted},
                  {"chain_residual", C.residual},
                  {"chain_bound_constant", C.bound_constant},
                  {"projection_error", C.projection_error}}
                     .dump(2) + "\n");

    checks.push_back(at_most("mollification constants: max deviation from mean", dev, 0.5));
    checks.push_back(within("sup-convolution eps exponent", S.table.slope, 0.8, 1.2));
    checks.push_back(below("chain budget fit residual", C.residual, 0.25));
}

void run_exponents(const json& p, std::uint64_t, ArtifactSet& out, std::vector<Check>& checks) {
    json all = json::array();
    double ident = 0;
    for (int d : list<int>(p, "ds")) {
        auto e = rate_exponents(d);
        all.push_back(exponents_json(d));
        ident = std::max(ident, std::fabs(1.0 / (2 * e.s_star + 1) - e.gamma_prime.value()));
    }
    out.text("exponents.json", all.dump(2) + "\n");
    auto e2 = rate_exponents(2), e3 = rate_exponents(3);
    auto exact = [&](std::string name, double v, double want) { checks.push_back(within(std::move(name), v, want, want)); };
    exact("gamma_2", e2.gamma.value(), 1.0 / 25);
    exact("gamma'_2", e2.gamma_prime.value(), 1.0 / 9);
    exact("s*(2)", e2.s_star, 4);
    exact("gamma_3", e3.gamma.value(), 1.0 / 25);
    exact("gamma'_3", e3.gamma_prime.value(), 1.0 / 9);
    checks.push_back(at_most("max |1/(2s*+1) - gamma'_d|", ident, 0.0));
}

void run_solver_oracles(const json& p, std::uint64_t seed, ArtifactSet& out, std::vector<Check>& checks) {
    ProblemData d;
    d.T = 0.5;
    d.eta = 0.05;
    d.A0 = 0.05;
    d.G.lin = TrigFunction{0, {0.3}, {0.2}};
    d.A = TrigFunction{0.02, {}, {0.01}};
    int R = p.at("resolution");
    auto V = solve_hjb_nparticle(d, 2, R);
    ProblemData single = d;
    single.A0 = 0.0;
    single.A.c0 += d.A0;
    HjbOptions o;
    o.dt = V.dt;
    auto U = solve_hjb_nparticle(single, 1, R, o);
    double dev = 0;
    for (int i = 0; i < R; ++i)
        for (int j = 0; j < R; ++j)
            dev = std::max(dev, std::fabs(V.at_node(0, {i, j}) - 0.5 * (U.at_node(0, {i}) + U.at_node(0, {j}))));

    int F = p.at("fp_resolution");
    ProblemData free;
    auto path = CommonNoisePath::sample(0, 0.5, 40, 0.4, derive_seed(seed, "oracles/path"));
    auto m0 = density(F, [](double x) { return 1.0 + 0.9 * std::sin(2 * kPi * x); });
    auto fp = solve_fp_common_noise(FeedbackControl::zero(0, 0.5, 1, 8, 1.0), free, m0, path);
    double shift = 0;
    for (std::size_t k = 0; k < fp.slices.size(); ++k)
        shift = std::max(shift, d1(fp.slices[k], translate(m0, std::vector<double>{path.shift(fp.times[k])})).value);

    ProblemData h = d;
    h.A = TrigFunction::constant(0.0);
    h.G.mom = TrigFunction{0, {}, {1.0}};
    h.G.kappa = 1.0;
    auto sc_h = hjb_self_convergence(h, 1, p.at("sc_resolution"));

    ProblemData q;
    q.eta = 0.02;
    q.A = TrigFunction{0.05, {}, {0.03}};
    auto qpath = CommonNoisePath::sample(0, 0.3, 30, 0.3, derive_seed(seed, "oracles/fp_sc"));
    auto c = FeedbackControl::zero(0, 0.3, 3, 16, 1.0);
    std::mt19937_64 rng(derive_seed(seed, "oracles/control"));
    std::uniform_real_distribution<double> u(-1, 1);
    for (double& v : c.values) v = u(rng);
    auto sc_f = fp_self_convergence(c, q, density(64, [](double x) { return 1 + std::cos(2 * kPi * x); }), qpath);

    out.text("solver_oracles.json", json{{"decoupling_deviation", dev},
                                         {"transport_deviation", shift},
                                         {"hjb_order", sc_h.order},
                                         {"fp_order", sc_f.order}}
                                        .dump(2) + "\n");
    checks.push_back(at_most("N = 2 decoupling deviation", dev, 2.0 / (double(R) * R)));
    checks.push_back(at_most("FP path-shift deviation", shift, 2.0 / F));
    checks.push_back(at_least("HJB self-convergence order", sc_h.order, 1.0));
    checks.push_back(at_least("FP self-convergence order", sc_f.order, 1.0));
}

const std::map<std::string, KindInfo>& registry() {
    static const std::map<std::string, KindInfo> r = [] {
        std::map<std::string, KindInfo> m;
        auto I = PType::integer;
        auto X = PType::number;
        auto IL = PType::int_list;
        auto XL = PType::num_list;
        m["zero_noise_ordering"] = {{{"Ns", IL, ipow2(0, 6), 1, 256},
                                     {"costs", PType::str_list, {"zero", "mean_quadratic", "d1_to_reference"}, 0, 0,
                                      {"zero", "mean_quadratic", "d1_to_reference"}},
                                     {"t", X, 0.5, 0, 1e6},
                                     {"T", X, 1.0, 0, 1e6},
                                     {"extra_atoms", I, 4, 0, 1024}},
                                    run_zero_noise};
        m["gap_rate"] = {{{"d", I, 1, 1, 1}, {"Ns", IL, ipow2(2, 8), 1, 4096}, {"t", X, 0.5, 0, 1e6}, {"T", X, 1.0, 0, 1e6}},
                         run_gap_rate};
        m["convexity_equality"] = {{{"Ns", IL, ipow2(0, 3), 1, 1024},
                                    {"reps", IL, ipow2(0, 3), 1, 64},
                                    {"b", X, 1.0},
                                    {"xbar", X, 0.0},
                                    {"t", X, 0.5, 0, 1e6},
                                    {"T", X, 1.0, 0, 1e6}},
                                   run_convexity};
        m["viscosity_rate"] = {{{"N", I, 1, 1, 2},
                                {"etas", XL, pow2(-8, -2), 1e-6, 1},
                                {"resolution", I, 256, 8, 4096},
                                {"T", X, 1.0, 1e-6, 100},
                                {"g_amplitude", X, 1.0, -10, 10}},
                               run_viscosity};
        m["gradient_decay"] = {{{"Ns", IL, std::vector<int>{1, 2, 3}, 1, 3},
                                {"eta", X, 0.1, 1e-6, 10},
                                {"A0", X, 0.05, 0, 10},
                                {"resolution", I, 64, 8, 1024},
                                {"T", X, 0.5, 1e-6, 100}},
                               run_gradient_decay};
        m["tv_contraction"] = {{{"triples", I, 20, 1, 10000},
                                {"resolution", I, 64, 8, 4096},
                                {"steps", I, 30, 1, 100000},
                                {"T", X, 0.3, 1e-6, 100},
                                {"sigma0", X, 0.3, 0, 10},
                                {"eta", X, 0.02, 0, 10}},
                               run_tv};
        m["commutator"] = {{{"deltas", XL, std::vector<double>{0.2, 0.1, 0.05}, 1e-4, 0.5},
                            {"resolution", I, 256, 16, 8192},
                            {"horizon", X, 0.05, 1e-6, 0.5},
                            {"steps", I, 50, 1, 100000},
                            {"sigma0", X, 0.3, 0, 10}},
                           run_commutator};
        m["sampling_rate"] = {{{"d1_Ns", IL, ipow2(4, 10), 1, 1 << 20},
                               {"d1_trials", I, 200, 30, 1000000},
                               {"d3_Ns", IL, ipow2(6, 9), 1, 4096},
                               {"d3_trials", I, 50, 30, 100000}},
                              run_sampling};
        m["quantization"] = {{{"d", I, 1, 1, 2}, {"Ns", IL, ipow2(0, 5), 1, 4096}}, run_quantization};
        m["regularization_chain"] = {{{"cells", I, 8, 2, 16},
                                      {"lattice_resolution", I, 8, 1, 16},
                                      {"z_resolution", I, 8, 1, 64},
                                      {"s_star", I, 3, 1, 8},
                                      {"deltas", XL, std::vector<double>{0.05, 0.1, 0.2}, 1e-3, 0.5},
                                      {"thetas", XL, std::vector<double>{0.125, 0.25, 0.5}, 1e-6, 1},
                                      {"lambdas", XL, std::vector<double>{0.05, 0.1, 0.2}, 0, 0.5},
                                      {"c_cfg", X, 10.0, 1, 1e6},
                                      {"random_pairs", I, 500, 0, 100000},
                                      {"mode_cells", I, 64, 2, 4096},
                                      {"mode_freq", I, 8, 1, 2048},
                                      {"supconv_delta", X, 0.2, 1e-3, 0.5},
                                      {"supconv_eps", XL, std::vector<double>{0.2, 0.4, 0.8}, 1e-12, 100}},
                                     run_chain};
        m["exponents"] = {{{"ds", IL, std::vector<int>{1, 2, 3, 4, 5, 6}, 1, 64}}, run_exponents};
        m["solver_oracles"] = {{{"resolution", I, 32, 8, 256}, {"fp_resolution", I, 128, 16, 4096}, {"sc_resolution", I, 32, 8, 256}},
                               run_solver_oracles};
        return m;
    }();
    return r;
}

std::string relation_text(const Check& c) {
    if (c.relation == "in") return c.lo == c.hi ? "== " + num(c.lo) : "in [" + num(c.lo) + ", " + num(c.hi) + "]";
    return c.relation + " " + num(c.lo);
}

}  // namespace

const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> k = [] {
        std::vector<std::string> v;
        for (const auto& [name, info] : registry()) v.push_back(name);
        return v;
    }();
    return k;
}

json default_params(const std::string& kind) {
    if (!registry().count(kind)) throw SchemaError("kind: unknown experiment '" + kind + "'");
    return fill_params(kind, json::object());
}

ExperimentConfig ExperimentConfig::parse(const json& j) {
    if (!j.is_object()) throw SchemaError("config: expected a JSON object");
    for (const auto& [k, v] : j.items())
        if (k != "schema" && k != "kind" && k != "seed" && k != "output_dir" && k != "params")
            throw SchemaError(k + ": unknown field");
    if (!j.contains("schema")) throw SchemaError("schema: required");
    if (!j.at("schema").is_number_integer() || j.at("schema").get<int>() != kConfigSchema)
        throw SchemaError("schema: unsupported version (expected " + std::to_string(kConfigSchema) + ")");
    if (!j.contains("kind")) throw SchemaError("kind: required");
    if (!j.at("kind").is_string()) throw SchemaError("kind: expected a string");
    ExperimentConfig c;
    c.kind = j.at("kind");
    if (!registry().count(c.kind)) throw SchemaError("kind: unknown experiment '" + c.kind + "'");
    if (!j.contains("seed")) throw SchemaError("seed: required");
    const auto& sd = j.at("seed");
    if (!sd.is_number_unsigned() && !(sd.is_number_integer() && sd.get<std::int64_t>() >= 0)) throw SchemaError("seed: expected a non-negative integer");
    c.seed = sd.get<std::uint64_t>();
    if (j.contains("output_dir")) {
        if (!j.at("output_dir").is_string() || j.at("output_dir").get<std::string>().empty())
            throw SchemaError("output_dir: expected a non-empty string");
        c.output_dir = j.at("output_dir").get<std::string>();
    } else {
        c.output_dir = fs::path("out") / c.kind;
    }
    c.params = fill_params(c.kind, j.contains("params") ? j.at("params") : json());
    return c;
}

json ExperimentConfig::echo() const {
    return {{"schema", kConfigSchema}, {"kind", kind}, {"seed", seed}, {"output_dir", output_dir.generic_string()}, {"params", params}};
}

bool RunReport::pass() const {
    if (!error.empty() || checks.empty()) return false;
    for (const auto& c : checks)
        if (!c.pass) return false;
    return true;
}

json RunReport::to_json() const {
    json cs = json::array();
    for (const auto& c : checks) {
        json e = {{"name", c.name}, {"pass", c.pass}, {"measured", c.measured}, {"relation", c.relation}};
        if (c.relation == "in") {
            e["lo"] = c.lo;
            e["hi"] = c.hi;
        } else {
            e["bound"] = c.lo;
        }
        e["text"] = num(c.measured) + " " + relation_text(c);
        cs.push_back(e);
    }
    json j = {{"config", config}, {"checks", cs}, {"artifacts", artifacts}, {"pass", pass()}};
    if (!error.empty()) j["error"] = error;
    return j;
}

RunReport run_experiment(const ExperimentConfig& cfg) {
    RunReport rep;
    rep.config = cfg.echo();
    auto start = std::chrono::steady_clock::now();
    ArtifactSet out(cfg.output_dir);
    try {
        registry().at(cfg.kind).run(cfg.params, cfg.seed, out, rep.checks);
        rep.artifacts = out.names();
        out.text("report.json", rep.to_json().dump(2) + "\n");
        out.commit();
    } catch (const std::exception& e) {
        out.discard();
        rep.checks.clear();
        rep.artifacts.clear();
        rep.error = e.what();
        fs::create_directories(cfg.output_dir);
        write_file(cfg.output_dir / "report.json", rep.to_json().dump(2) + "\n");
    }
    rep.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

const std::vector<SuiteEntry>& suite_entries() {
    static const std::vector<SuiteEntry> e = {
        {1, "zero_noise_ordering", "zero_noise_ordering", 60},
        {2, "gap_rate", "gap_rate", 300},
        {3, "convexity_equality", "convexity_equality", 60},
        {4, "viscosity_rate", "viscosity_rate", 600},
        {5, "gradient_decay", "gradient_decay", 900},
        {6, "tv_contraction", "tv_contraction", 120},
        {7, "commutator", "commutator", 300},
        {8, "sampling_rate", "sampling_rate", 600},
        {9, "regularization_chain", "regularization_chain", 600},
        {10, "exponents", "exponents", 1},
        {11, "solver_oracles", "solver_oracles", 600},
    };
    return e;
}

bool SuiteReport::pass() const {
    for (const auto& r : runs)
        if (!r.pass()) return false;
    return !runs.empty();
}

json SuiteReport::to_json() const {
    json rs = json::array();
    for (std::size_t i = 0; i < runs.size(); ++i)
        rs.push_back({{"criterion", entries[i].criterion}, {"name", entries[i].name}, {"report", runs[i].to_json()}});
    return {{"runs", rs}, {"pass", pass()}};
}

SuiteReport suite(const std::string& name, std::uint64_t seed, const fs::path& out_dir) {
    SuiteReport s;
    for (const auto& e : suite_entries())
        if (name == "all" || name == e.name) s.entries.push_back(e);
    if (s.entries.empty()) throw SchemaError("suite: unknown name '" + name + "'");
    for (const auto& e : s.entries) {
        json j = {{"schema", kConfigSchema}, {"kind", e.kind}, {"seed", seed}, {"output_dir", (out_dir / e.name).generic_string()}};
        s.runs.push_back(run_experiment(ExperimentConfig::parse(j)));
    }
    return s;
}

json exponents_json(int d) {
    auto e = rate_exponents(d);
    auto frac = [](const Rational& r) { return std::to_string(r.num) + "/" + std::to_string(r.den); };
    return {{"d", d},
            {"gamma", frac(e.gamma)},
            {"gamma_prime", frac(e.gamma_prime)},
            {"s_star", e.s_star},
            {"empirical_rate", e.rnd_tag},
            {"quantization_rate", e.rdn_tag}};
}

// ---- plotting ----

namespace {

struct Axis {
    double lo, hi;
    bool log;
    double map(double v, double a, double b) const {
        double u = log ? std::log10(v) : v;
        return a + (u - lo) / (hi - lo) * (b - a);
    }
};

Axis make_axis(const std::vector<double>& v, bool log) {
    double lo = 1e300, hi = -1e300;
    for (double x : v) {
        double u = log ? std::log10(x) : x;
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    double pad = 0.05 * (hi - lo);
    return {lo - pad, hi + pad, log};
}

std::vector<double> ticks(const Axis& a) {
    std::vector<double> t;
    if (a.log) {
        for (double e = std::ceil(a.lo); e <= a.hi; e += 1) t.push_back(std::pow(10.0, e));
        if (t.size() >= 2) return t;
        t.clear();
        for (int i = 0; i <= 4; ++i) t.push_back(std::pow(10.0, a.lo + (a.hi - a.lo) * (0.1 + 0.2 * i)));
        return t;
    }
    for (int i = 0; i <= 4; ++i) t.push_back(a.lo + (a.hi - a.lo) * (0.1 + 0.2 * i));
    return t;
}

std::string esc(const std::string& s) {
    std::string o;
    for (char c : s) {
        if (c == '<') o += "&lt;";
        else if (c == '>') o += "&gt;";
        else if (c == '&') o += "&amp;";
        else o += c;
    }
    return o;
}

}  // namespace

PlotResult emit_plot(const fs::path& csv, const fs::path& svg, const PlotSpec& spec) {
    auto tab = read_csv(csv);
    if (tab.header.size() < 2 && (spec.x.empty() || spec.y.empty()))
        throw Error(csv.string() + ": need two columns to plot");
    if (tab.rows() == 0) throw Error(csv.string() + ": no data rows");
    const auto& xs = spec.x.empty() ? tab.columns[0] : tab.column(spec.x);
    const auto& ys = spec.y.empty() ? tab.columns[1] : tab.column(spec.y);
    std::string xname = spec.x.empty() ? tab.header[0] : spec.x, yname = spec.y.empty() ? tab.header[1] : spec.y;
    if (spec.loglog)
        for (std::size_t i = 0; i < xs.size(); ++i)
            if (!(xs[i] > 0 && ys[i] > 0)) throw Error(csv.string() + ": log-log plot needs positive values");

    const double W = 800, H = 600, L = 90, R = 30, Tm = 50, B = 70;
    Axis ax = make_axis(xs, spec.loglog), ay = make_axis(ys, spec.loglog);
    auto X = [&](double v) { return ax.map(v, L, W - R); };
    auto Y = [&](double v) { return ay.map(v, H - B, Tm); };

    std::string s = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
        "font-family=\"DejaVu Sans, Arial, sans-serif\" font-size=\"13\">\n",
        W, H, W, H);
    s += fmt::format("<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"white\"/>\n", W, H);
    s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", L, Tm,
                     W - L - R, H - Tm - B);
    for (double t : ticks(ax)) {
        double px = X(t);
        s += fmt::format("<line x1=\"{:.2f}\" y1=\"{}\" x2=\"{:.2f}\" y2=\"{}\" stroke=\"#ddd\"/>\n", px, Tm, px, H - B);
        s += fmt::format("<text x=\"{:.2f}\" y=\"{}\" text-anchor=\"middle\">{:.3g}</text>\n", px, H - B + 20, t);
    }
    for (double t : ticks(ay)) {
        double py = Y(t);
        s += fmt::format("<line x1=\"{}\" y1=\"{:.2f}\" x2=\"{}\" y2=\"{:.2f}\" stroke=\"#ddd\"/>\n", L, py, W - R, py);
        s += fmt::format("<text x=\"{}\" y=\"{:.2f}\" text-anchor=\"end\">{:.3g}</text>\n", L - 6, py + 4, t);
    }
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n", (L + W - R) / 2,
                     H - 20, esc(xname));
    s += fmt::format(
        "<text x=\"20\" y=\"{}\" text-anchor=\"middle\" font-size=\"15\" transform=\"rotate(-90 20 {})\">{}</text>\n",
        (Tm + H - B) / 2, (Tm + H - B) / 2, esc(yname));
    std::string title = spec.title.empty() ? csv.filename().string() : spec.title;
    s += fmt::format("<text x=\"{}\" y=\"30\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n", W / 2, esc(title));

    std::string pts;
    for (std::size_t i = 0; i < xs.size(); ++i) pts += fmt::format("{}{:.2f},{:.2f}", i ? " " : "", X(xs[i]), Y(ys[i]));
    s += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    for (std::size_t i = 0; i < xs.size(); ++i)
        s += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3.5\" fill=\"#1f77b4\"/>\n", X(xs[i]), Y(ys[i]));

    PlotResult res;
    if (spec.loglog && xs.size() >= 3) {
        RateTable t;
        for (std::size_t i = 0; i < xs.size(); ++i) t.rows.push_back({xs[i], ys[i], 0.0});
        std::sort(t.rows.begin(), t.rows.end(), [](const RateRow& a, const RateRow& b) { return a.param < b.param; });
        auto fit = fit_loglog_slope(t);
        res.slope = fit.slope;
        res.fitted = true;
        res.label = fmt::format("slope = {:.3f}", fit.slope);
        auto [xmin, xmax] = std::minmax_element(xs.begin(), xs.end());
        auto line = [&](double x) { return std::exp(fit.intercept + fit.slope * std::log(x)); };
        s += fmt::format(
            "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#d62728\" stroke-width=\"1.5\" "
            "stroke-dasharray=\"6 4\"/>\n",
            X(*xmin), Y(line(*xmin)), X(*xmax), Y(line(*xmax)));
        s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\" fill=\"#d62728\">{}</text>\n", W - R - 10, Tm + 20,
                         res.label);
    }
    s += "</svg>\n";
    write_file(svg, s);
    return res;
}

}  // namespace mfclab
