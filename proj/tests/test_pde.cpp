#include <cmath>
#include <random>

#include "doctest.h"
#include "mfclab/metrics.hpp"
#include "mfclab/pde.hpp"
#include "oracles.hpp"

using namespace mfclab;

namespace {

ProblemData base_data() {
    ProblemData d;
    d.T = 0.5;
    d.eta = 0.05;
    d.A0 = 0.05;
    d.G.lin = TrigFunction{0, {0.3}, {0.2}};
    return d;
}

// V(0,x) for -V_t - eta V'' + V'^2/2 = 0, V(T) = g, via the Cole-Hopf transform and a heat-kernel quadrature
double cole_hopf(const TrigFunction& g, double eta, double T, double x) {
    double var = 2.0 * eta * T;
    auto integrand = [&](double y) {
        double w = 0.0;
        for (int k = -4; k <= 4; ++k) {
            double z = x - y + k;
            w += std::exp(-z * z / (2 * var));
        }
        return std::exp(-g(y) / (2 * eta)) * w / std::sqrt(2 * kPi * var);
    };
    return -2.0 * eta * std::log(oracle::simpson(integrand, 0.0, 1.0, 4000));
}

GridDensity density(int R, const std::function<double(double)>& f) {
    std::vector<double> m(R);
    double s = 0;
    for (int i = 0; i < R; ++i) s += m[i] = f((i + 0.5) / R);
    for (double& v : m) v /= s;
    return make_grid(Domain::torus(1), {R}, m);
}

}  // namespace

TEST_CASE("trig functions") {
    TrigFunction f{0.1, {0.3, -0.2}, {0.5}};
    for (double x : {0.0, 0.13, 0.5, 0.77}) {
        double h = 1e-6;
        CHECK(f.derivative(x) == doctest::Approx((f(x + h) - f(x - h)) / (2 * h)).epsilon(1e-6));
    }
    CHECK(f.cell_average(0.2, 0.35) == doctest::Approx(oracle::simpson([&](double x) { return f(x); }, 0.2, 0.35) / 0.15));
    auto k = MollifierKernel::gaussian(0.05);
    auto g = f.mollified(k);
    for (double x : {0.0, 0.3, 0.61}) {
        double r = 6 * 0.05;
        double num = oracle::simpson([&](double u) { return f(x - u) * std::exp(-u * u / (2 * 0.05 * 0.05)); }, -r, r);
        double den = oracle::simpson([&](double u) { return std::exp(-u * u / (2 * 0.05 * 0.05)); }, -r, r);
        CHECK(g(x) == doctest::Approx(num / den).epsilon(1e-8));
    }
    CostSpec c{f, TrigFunction{0, {}, {1.0}}, 0.7};
    std::vector<double> x{0.1, 0.4, 0.9};
    auto e = make_empirical(Domain::torus(1), x, {1. / 3, 1. / 3, 1. / 3});
    CHECK(c.on_config(x.data(), 3) == doctest::Approx(c.on_empirical(e)));
}

TEST_CASE("hjb constant and terminal") {
    ProblemData d = base_data();
    d.G = CostSpec{TrigFunction::constant(0.7), {}, 0.0};
    auto V = solve_hjb_nparticle(d, 2, 16);
    for (double v : V.values) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));
    auto g = hjb_gradient_probe(V);
    CHECK(g.grad == doctest::Approx(0.0));
    CHECK(g.hess == doctest::Approx(0.0));

    ProblemData e = base_data();
    e.G.mom = TrigFunction{0, {}, {1.0}};
    e.G.kappa = 1.0;
    auto W = solve_hjb_nparticle(e, 2, 16);
    CHECK(W.times.back() == doctest::Approx(e.T));
    CostSpec Gm = e.G.mollified(e.eta);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) {
            double x[2] = {i / 16.0, j / 16.0};
            CHECK(W.at_node(W.times.size() - 1, {i, j}) == Gm.on_config(x, 2));
        }
}

TEST_CASE("hjb against Cole-Hopf") {
    ProblemData d;
    d.T = 0.5;
    d.eta = 0.1;
    d.mollify_costs = false;
    d.G.lin = TrigFunction{0, {0.3}, {0.2}};
    auto V = solve_hjb_nparticle(d, 1, 64);
    for (int i = 0; i < 64; i += 8) CHECK(V.at_node(0, {i}) == doctest::Approx(cole_hopf(d.G.lin, 0.1, 0.5, i / 64.0)).epsilon(1e-3));
}

TEST_CASE("hjb decoupling, symmetry, comparison") {
    ProblemData d = base_data();
    d.A = TrigFunction{0.02, {}, {0.01}};
    int R = 32;
    auto V = solve_hjb_nparticle(d, 2, R);
    ProblemData d1 = d;
    d1.A0 = 0.0;
    d1.A.c0 += d.A0;
    HjbOptions o;
    o.dt = V.dt;
    auto U = solve_hjb_nparticle(d1, 1, R, o);
    double dev = 0.0, asym = 0.0;
    for (int i = 0; i < R; ++i)
        for (int j = 0; j < R; ++j) {
            dev = std::max(dev, std::fabs(V.at_node(0, {i, j}) - 0.5 * (U.at_node(0, {i}) + U.at_node(0, {j}))));
            asym = std::max(asym, std::fabs(V.at_node(0, {i, j}) - V.at_node(0, {j, i})));
        }
    CHECK(dev <= 2.0 / (R * R));
    CHECK(asym <= 1e-10);

    ProblemData hi = d;
    hi.G.lin.c0 += 0.05;
    hi.G.lin.a[0] += 0.02;  // g2 - g1 = 0.05 + 0.02 cos >= 0
    auto V2 = solve_hjb_nparticle(hi, 2, R);
    double worst = -1;
    for (std::size_t k = 0; k < V.values.size(); ++k) worst = std::max(worst, V.values[k] - V2.values[k]);
    CHECK(worst <= 1e-10);
}

TEST_CASE("hjb refusals and stability") {
    ProblemData d = base_data();
    HjbOptions o;
    o.dt = 0.1;
    CHECK_THROWS_AS(solve_hjb_nparticle(d, 1, 32, o), Error);
    ProblemData bad = d;
    bad.eta = 0.01;
    bad.A0 = 1.0;
    CHECK_THROWS_AS(solve_hjb_nparticle(bad, 3, 8), Error);
    CHECK_FALSE(hjb_stability(bad, 3, 8, 1.0).dominant);
    CHECK(hjb_stability(d, 2, 32, 1.0).dominant);
    CHECK_THROWS_AS(solve_hjb_nparticle(d, 4, 8), Error);
    ProblemData neg = d;
    neg.A = TrigFunction{0.0, {0.1}, {}};
    CHECK_THROWS_AS(solve_hjb_nparticle(neg, 1, 16), Error);
}

TEST_CASE("hjb self-convergence and time regularity") {
    ProblemData d = base_data();
    d.G.mom = TrigFunction{0, {}, {1.0}};
    d.G.kappa = 1.0;
    auto sc = hjb_self_convergence(d, 1, 32);
    CHECK(sc.order >= 1.0);
    auto V = solve_hjb_nparticle(d, 1, 64);
    auto hc = time_holder_check(V);
    CHECK(hc.stable);
    CHECK(hc.constant > 0.0);
}

TEST_CASE("gradient decay across N") {
    ProblemData d = base_data();
    d.eta = 0.1;
    d.G.mom = TrigFunction{0, {}, {1.0}};
    d.G.kappa = 1.0;
    double lo = 1e300, hi = 0;
    for (int N : {1, 2}) {
        double g = N * hjb_gradient_probe(solve_hjb_nparticle(d, N, 32)).grad;
        lo = std::min(lo, g);
        hi = std::max(hi, g);
    }
    CHECK(hi / lo <= 2.0);
}

TEST_CASE("inviscid oracle") {
    ProblemData d;
    d.T = 1.0;
    d.G.lin = TrigFunction{0, {1.0}, {}};
    auto o = inviscid_oracle(d, 1, 16, 0.0);
    for (int i = 0; i < 16; ++i) {
        double x = i / 16.0, best = 1e300;
        for (int k = 0; k <= 200000; ++k) {
            double y = x - 3 + 6.0 * k / 200000;
            best = std::min(best, std::cos(2 * kPi * y) + (y - x) * (y - x) / 2);
        }
        CHECK(o[i] == doctest::Approx(best).epsilon(1e-7));
    }
    ProblemData bad = d;
    bad.A0 = 0.1;
    CHECK_THROWS_AS(inviscid_oracle(bad, 1, 16, 0.0), Error);
}

TEST_CASE("viscosity probe small") {
    ProblemData d;
    d.T = 0.25;
    d.G.lin = TrigFunction{0, {0.5}, {}};
    auto t = viscosity_rate_probe(d, 1, {0.02, 0.04, 0.08}, 64);
    REQUIRE(t.rows.size() == 3);
    for (std::size_t i = 1; i < 3; ++i) CHECK(t.rows[i].value > t.rows[i - 1].value);
}

TEST_CASE("fp invariants") {
    ProblemData d;
    d.eta = 0.05;
    auto path = CommonNoisePath::zero(0, 0.2, 20);
    auto c = FeedbackControl::zero(0, 0.2, 1, 8, 1.0);
    auto u = uniform_grid(Domain::torus(1), 64);
    for (const auto& s : solve_fp_common_noise(c, d, u, path).slices)
        for (double v : s.masses) CHECK(v == doctest::Approx(1.0 / 64).epsilon(1e-10));

    // heat kernel variance 2 eta t from a near-point mass
    auto m0 = point_mass_grid(Domain::torus(1), 256, std::vector<double>{0.5}.data());
    auto res = solve_fp_common_noise(c, d, m0, path);
    auto var = [](const GridDensity& g) {
        double s = 0;
        for (std::size_t i = 0; i < g.cells(); ++i) s += g.masses[i] * std::pow((i + 0.5) / g.cells() - 0.5, 2);
        return s;
    };
    double v0 = var(res.slices.front());
    for (std::size_t k = 5; k < res.slices.size(); k += 5) {
        double grow = var(res.slices[k]) - v0;
        CHECK(grow == doctest::Approx(2 * 0.05 * res.times[k]).epsilon(0.1));
    }
    for (const auto& s : res.slices) {
        double mass = 0;
        for (double v : s.masses) {
            CHECK(v >= 0.0);
            mass += v;
        }
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("fp pure transport along the path") {
    ProblemData d;
    auto path = CommonNoisePath::sample(0, 0.5, 40, 0.4, 11);
    CHECK(path.W[0] == 0.0);
    auto c = FeedbackControl::zero(0, 0.5, 1, 8, 1.0);
    int R = 128;
    auto m0 = density(R, [](double x) { return 1.0 + 0.9 * std::sin(2 * kPi * x); });
    auto res = solve_fp_common_noise(c, d, m0, path);
    for (std::size_t k = 0; k < res.slices.size(); k += 7) {
        auto expect = translate(m0, std::vector<double>{path.shift(res.times[k])});
        CHECK(d1(res.slices[k], expect).value <= 2.0 / R);
    }
}

TEST_CASE("fp linearity, contraction, refusals") {
    ProblemData d;
    d.eta = 0.02;
    d.A = TrigFunction{0.05, {}, {0.03}};
    auto path = CommonNoisePath::sample(0, 0.3, 30, 0.3, 5);
    auto c = FeedbackControl::zero(0, 0.3, 3, 16, 1.0);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1, 1);
    for (double& v : c.values) v = u(rng);
    int R = 64;
    auto a = density(R, [](double x) { return 1 + std::cos(2 * kPi * x); });
    auto b = density(R, [](double x) { return std::exp(-40 * (x - 0.3) * (x - 0.3)); });
    double lam = 0.3;
    std::vector<double> mix(R);
    for (int i = 0; i < R; ++i) mix[i] = (1 - lam) * a.masses[i] + lam * b.masses[i];
    auto gm = make_grid(Domain::torus(1), {R}, mix);
    auto fa = solve_fp_common_noise(c, d, a, path), fb = solve_fp_common_noise(c, d, b, path),
         fm = solve_fp_common_noise(c, d, gm, path);
    for (std::size_t k = 0; k < fa.slices.size(); ++k) {
        for (int i = 0; i < R; ++i)
            CHECK(fm.slices[k].masses[i] ==
                  doctest::Approx((1 - lam) * fa.slices[k].masses[i] + lam * fb.slices[k].masses[i]).epsilon(1e-9));
        CHECK(tv_distance(fa.slices[k], fm.slices[k]) == doctest::Approx(lam * tv_distance(fa.slices[k], fb.slices[k])));
    }
    CHECK(tv_contraction_probe(a, b, c, d, path) <= 1.0 + 1e-8);
    CHECK(tv_contraction_probe(a, a, c, d, path) == 0.0);

    FpOptions o;
    o.substeps = 1;
    auto fast = c;
    for (double& v : fast.values) v = 50.0;
    fast.bound = 50.0;
    CHECK_THROWS_AS(solve_fp_common_noise(fast, d, a, path, o), Error);

    auto sc = fp_self_convergence(c, d, a, path);
    CHECK(sc.order >= 1.0);
}

TEST_CASE("commutator probe") {
    int R = 256;
    auto m0 = density(R, [](double x) { return 0.2 + (x > 0.4 && x < 0.45 ? 16.0 : 0.0); });
    auto path = CommonNoisePath::sample(0, 0.5, 50, 0.3, 3);
    ProblemData d;
    d.A = TrigFunction::constant(0.1);
    auto c = commutator_probe(TrigFunction{0.5, {}, {0.3}}, 0.1, d, path, 0.05, m0);
    CHECK(c.probe <= 1e-10);
    CHECK(c.scheme_error > 0.0);
    auto z = commutator_probe(TrigFunction{}, 0.1, d, path, 0.05, m0);
    CHECK(z.probe <= 1e-12);
    auto bad = density(R, [](double x) { return x < 0.5 ? 1.0 : 0.0; });
    CHECK_THROWS_AS(commutator_probe(TrigFunction{0.5, {}, {0.3}}, 0.1, d, path, 0.05, bad), Error);
}

TEST_CASE("integrated value") {
    ProblemData d = base_data();
    auto V = solve_hjb_nparticle(d, 2, 16);
    auto node = make_empirical(Domain::torus(1), {0.25}, {1.0});
    auto e = integrated_value_mc(V, node, 0.0, 200, 1);
    CHECK(e.estimate == doctest::Approx(V.at_node(0, {4, 4})).epsilon(1e-12));
    CHECK(e.stderr_ == 0.0);
    ProblemData c = d;
    c.G = CostSpec{TrigFunction::constant(1.5), {}, 0.0};
    auto W = solve_hjb_nparticle(c, 1, 16);
    CHECK(integrated_value_mc(W, uniform_grid(Domain::torus(1), 8), 0.1, 300, 2).estimate == doctest::Approx(1.5));
    CHECK_THROWS_AS(integrated_value_mc(W, node, 0.0, 50, 1), Error);
}

TEST_CASE("feedback search") {
    ProblemData d;
    d.T = 0.3;
    d.eta = 0.05;
    d.G = CostSpec{TrigFunction::constant(0.4), {}, 0.0};
    auto m0 = uniform_grid(Domain::torus(1), 32);
    auto s = feedback_value_search(d, m0, 2, 8, 3, 1);
    CHECK(s.value == doctest::Approx(0.4).epsilon(1e-9));

    ProblemData e = d;
    e.G = CostSpec{TrigFunction{0, {0.5}, {}}, {}, 0.0};
    auto peak = density(32, [](double x) { return std::exp(-30 * x * x) + std::exp(-30 * (1 - x) * (1 - x)); });
    auto r = feedback_value_search(e, peak, 2, 8, 6, 4);
    for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i] <= r.history[i - 1]);
    CHECK(r.history.back() < r.history.front());
    for (double v : r.control.values) CHECK(std::fabs(v) <= r.control.bound);
}
