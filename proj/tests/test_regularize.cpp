#include <cmath>
#include <random>

#include "doctest.h"
#include "mfclab/metrics.hpp"
#include "mfclab/regularize.hpp"
#include "oracles.hpp"

using namespace mfclab;

namespace {

GridDensity cells_density(int k, const std::function<double(double)>& f) {
    std::vector<double> m(k);
    double s = 0;
    for (int i = 0; i < k; ++i) s += m[i] = f((i + 0.5) / k);
    for (double& v : m) v /= s;
    return make_grid(Domain::torus(1), {k}, m);
}

// int g dm for a cell-uniform density, g = cos(2 pi x) + 0.3 sin(4 pi x) averaged exactly over cells
double linear_g(const GridDensity& m) {
    int k = m.resolution[0];
    double s = 0;
    for (int i = 0; i < k; ++i) {
        double a = double(i) / k, b = double(i + 1) / k;
        double avg = ((std::sin(2 * kPi * b) - std::sin(2 * kPi * a)) / (2 * kPi) -
                      0.3 * (std::cos(4 * kPi * b) - std::cos(4 * kPi * a)) / (4 * kPi)) * k;
        s += m.masses[i] * avg;
    }
    return s;
}

std::shared_ptr<MeasureLattice> small(int k = 4, int r = 4) { return std::make_shared<MeasureLattice>(simplex_lattice(k, r)); }

ValueField field_of(std::shared_ptr<MeasureLattice> L, const FieldSource& U, int Z) {
    return change_of_variables(tabulate(L, {0.0}, U, "test"), Z);
}

}  // namespace

TEST_CASE("simplex lattice") {
    auto L = simplex_lattice(4, 4);
    CHECK(L.base == 35);
    CHECK(L.size() == 35);
    CHECK(simplex_lattice(8, 8).base == 6435);
    CHECK(simplex_lattice(3, 2).size() == 7);  // Leb added as a designated member
    for (const auto& m : L.members) {
        double s = 0;
        for (double v : m.masses) {
            CHECK(v >= 0.0);
            s += v;
        }
        CHECK(s == doctest::Approx(1.0));
    }
    auto m = L.members[17];
    m.masses[0] += 3e-16;
    m.masses[1] -= 3e-16;
    CHECK(L.find(m) == std::optional<std::size_t>{17});
    CHECK(L.members[L.lebesgue()].masses[2] == doctest::Approx(0.25));
    std::size_t before = L.size();
    close_under_mixing(L, 0.5, L.size());
    CHECK(L.size() > before);
    CHECK_THROWS_AS(simplex_lattice(0, 4), Error);
}

TEST_CASE("sobolev embedding matches the dual norm") {
    auto L = simplex_lattice(8, 4);
    auto e = sobolev_embedding(L, 3);
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::size_t> u(0, L.size() - 1);
    for (int k = 0; k < 30; ++k) {
        std::size_t i = u(rng), j = u(rng);
        CHECK(std::sqrt(e.dist2(i, j)) == doctest::Approx(sobolev_dual_norm(L.members[i], L.members[j], 3)).epsilon(1e-10));
    }
}

TEST_CASE("change of variables") {
    auto L = small(8, 2);
    auto nu0 = cells_density(8, [](double x) { return 1 + 0.8 * std::cos(2 * kPi * x); });
    auto U = tabulate(L, {0.0}, d1_source(nu0), "d1");
    auto Uh = change_of_variables(U, 8);
    for (std::size_t i = 0; i < L->size(); ++i) {
        CHECK(Uh.at(0, 0, i) == U.at(0, 0, i));
        for (int z : {1, 3})
            CHECK(Uh.at(0, z, i) == doctest::Approx(d1(translate(L->members[i], std::vector<double>{z / 8.0}), nu0).value));
    }
    CHECK(Uh.projection_error == 0.0);
    // translation-invariant source
    auto Ul = change_of_variables(tabulate(L, {0.0}, d1_source(uniform_grid(Domain::torus(1), 8)), "leb"), 8);
    for (std::size_t i = 0; i < L->size(); ++i)
        for (int z = 1; z < 8; ++z) CHECK(Ul.at(0, z, i) == doctest::Approx(Ul.at(0, 0, i)).epsilon(1e-12));
    // a z-grid finer than the cells needs projection, which is recorded
    auto Uf = change_of_variables(U, 16);
    CHECK(Uf.projection_error > 0.0);
    CHECK(Uf.projection_error <= 0.5);
}

TEST_CASE("mollified value") {
    // linear field: Fubini against the smoothed test function
    int k = 256;
    auto L = std::make_shared<MeasureLattice>(explicit_lattice(
        {cells_density(k, [](double x) { return 1 + std::sin(2 * kPi * x); }),
         cells_density(k, [](double x) { return std::exp(-20 * (x - 0.3) * (x - 0.3)); }), uniform_grid(Domain::torus(1), k)}));
    for (double delta : {0.05, 0.1}) {
        auto K = MollifierKernel::gaussian(delta);
        for (std::size_t i = 0; i < 3; ++i) L->add(lattice_mollify(L->members[i], K));
    }
    auto U = tabulate(L, {0.0}, [](double, const GridDensity& m) { return linear_g(m); }, "linear");
    for (double delta : {0.05, 0.1}) {
        auto Ud = mollified_value(U, MollifierKernel::gaussian(delta));
        double s1 = std::exp(-2 * kPi * kPi * delta * delta), s2 = std::exp(-8 * kPi * kPi * delta * delta);
        for (std::size_t i = 0; i < 3; ++i) {
            const auto& m = L->members[i];
            double exact = 0;
            for (int c = 0; c < k; ++c) {
                double x = (c + 0.5) / k;
                exact += m.masses[c] * (s1 * std::cos(2 * kPi * x) + 0.3 * s2 * std::sin(4 * kPi * x));
            }
            CHECK(Ud.at(0, 0, i) == doctest::Approx(exact).epsilon(1e-3));
        }
    }
    // d1-Lipschitz field moves by at most E|U| delta
    auto S = small(8, 4);
    for (double delta : {0.05, 0.2}) {
        auto K = MollifierKernel::gaussian(delta);
        close_under_mollification(*S, K, S->base);
    }
    auto nu0 = cells_density(8, [](double x) { return 1 + 0.8 * std::cos(2 * kPi * x); });
    auto F = tabulate(S, {0.0}, d1_source(nu0), "d1");
    for (double delta : {0.05, 0.2}) {
        auto K = MollifierKernel::gaussian(delta);
        auto Fd = mollified_value(F, K);
        for (std::size_t i = 0; i < S->base; ++i)
            CHECK(std::fabs(Fd.at(0, 0, i) - F.at(0, 0, i)) <= kernel_first_moment(K) + 1e-12);
    }
    // delta -> 0: the lattice image is the member itself
    auto F0 = mollified_value(F, MollifierKernel::gaussian(1e-4));
    for (std::size_t i = 0; i < S->base; ++i) CHECK(F0.at(0, 0, i) == doctest::Approx(F.at(0, 0, i)).epsilon(1e-9));
}

TEST_CASE("sup-convolution") {
    auto L = small(8, 2);
    auto cst = field_of(L, [](double, const GridDensity&) { return 0.7; }, 8);
    auto S = sup_convolution(cst, 0.5, 3);
    for (std::size_t k = 0; k < cst.values.size(); ++k) {
        CHECK(S.field.values[k] == 0.7);
        CHECK(S.argmax[k] == static_cast<std::int64_t>(k));
    }
    auto nu0 = cells_density(8, [](double x) { return 1 + 0.8 * std::cos(2 * kPi * x); });
    auto f = field_of(L, d1_source(nu0), 8);
    auto P = supconv_error_probe(f, {0.5 * 0.1, 0.1}, 3);
    for (double e : {0.5, 2.0, 8.0}) {
        auto T = sup_convolution(f, e, 3);
        for (std::size_t k = 0; k < f.values.size(); ++k) CHECK(T.field.values[k] >= f.values[k]);
    }
    auto below = sup_convolution(f, 0.9 * P.threshold, 3);
    for (std::size_t k = 0; k < f.values.size(); ++k) CHECK(below.field.values[k] == f.values[k]);

    // order preservation and the z-shift symmetry of the lattice
    auto g = field_of(L, [&](double, const GridDensity& m) { return d1(m, nu0).value + 0.05 * (1.5 + linear_g(m)); }, 8);
    auto Sf = sup_convolution(f, 2.0, 3), Sg = sup_convolution(g, 2.0, 3);
    for (std::size_t k = 0; k < f.values.size(); ++k) CHECK(Sf.field.values[k] <= Sg.field.values[k] + 1e-12);
    for (std::size_t i = 0; i < L->size(); ++i) {
        auto j = L->find(lattice_shift(L->members[i], 1));
        REQUIRE(j);
        for (int z = 0; z < 7; ++z) CHECK(Sf.field.at(0, z + 1, i) == doctest::Approx(Sf.field.at(0, z, *j)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(sup_convolution(f, 0.0, 3), Error);
}

TEST_CASE("sup-convolution error law") {
    auto L = small(8, 4);
    auto nu0 = cells_density(8, [](double x) { return 1 + 0.8 * std::cos(2 * kPi * x); });
    close_under_mollification(*L, MollifierKernel::gaussian(0.2), L->size());
    auto f = mollified_value(field_of(L, d1_source(nu0), 8), MollifierKernel::gaussian(0.2));
    auto P = supconv_error_probe(f, {0.25, 0.5}, 3);
    double ratio = P.table.rows[1].value / P.table.rows[0].value;
    CHECK(ratio >= 1.4);
    CHECK(ratio <= 2.2);
    auto cst = field_of(L, [](double, const GridDensity&) { return -1.0; }, 8);
    auto C = supconv_error_probe(cst, {0.1, 1.0}, 3);
    for (const auto& r : C.table.rows) CHECK(r.value == 0.0);
    CHECK_FALSE(C.pass);
}

TEST_CASE("shrink to Lebesgue") {
    auto L = small(8, 2);
    close_under_mixing(*L, 0.3, L->size());
    auto nu0 = cells_density(8, [](double x) { return 1 + 0.8 * std::cos(2 * kPi * x); });
    auto f = field_of(L, d1_source(nu0), 8);
    auto s0 = shrink_to_lebesgue(f, 0.0);
    for (std::size_t k = 0; k < f.values.size(); ++k) CHECK(s0.values[k] == f.values[k]);
    auto s = shrink_to_lebesgue(f, 0.3);
    std::size_t leb = L->lebesgue();
    auto leb_m = L->members[leb];
    for (int z = 0; z < 8; ++z) CHECK(s.at(0, z, leb) == f.at(0, z, leb));
    // d1-Lipschitz with constant 1 and mixing moves m by lambda d1(m, Leb)
    for (std::size_t i = 0; i < L->base; ++i)
        for (int z = 0; z < 8; ++z)
            CHECK(std::fabs(s.at(0, z, i) - f.at(0, z, i)) <= 0.3 * d1(L->members[i], leb_m).value + 1e-12);
    CHECK_THROWS_AS(shrink_to_lebesgue(f, 0.6), Error);
}

TEST_CASE("mollification inequalities") {
    // single mode: d1 = A s/pi^2, TV = A s/pi, ||.||_{-3} = A / (2 sqrt 2) with A = 1, s = exp(-2 pi^2 delta^2)
    auto P = mollification_inequality_probe(mode_pairs(256, 1, 0.5), {0.2, 0.1}, 3);
    for (const auto& r : P.rows) {
        double sym = std::exp(-2 * kPi * kPi * r.delta * r.delta), n = 1 / (2 * std::sqrt(2.0));
        CHECK(r.c_d1 == doctest::Approx(sym / (kPi * kPi) * r.delta * r.delta / n).epsilon(1e-3));
        CHECK(r.c_tv == doctest::Approx(sym / kPi * std::pow(r.delta, 3) / n).epsilon(1e-3));
    }
    auto L = simplex_lattice(8, 4);
    auto same = mollification_inequality_probe({{L.members[3], L.members[3]}}, {0.1}, 3);
    CHECK(same.rows[0].c_d1 == 0.0);
    CHECK(same.rows[0].c_tv == 0.0);
    // halving delta grows the TV bound by 2^3; the measured TV ratio stays below 1.5 * 8
    for (const auto& [a, b] : random_pairs(L, 20, 3)) {
        double t1 = tv_distance(lattice_mollify(a, MollifierKernel::gaussian(0.1)), lattice_mollify(b, MollifierKernel::gaussian(0.1)));
        double t2 = tv_distance(lattice_mollify(a, MollifierKernel::gaussian(0.05)), lattice_mollify(b, MollifierKernel::gaussian(0.05)));
        CHECK(t2 <= 12.0 * t1);
    }
    auto pairs = random_pairs(simplex_lattice(8, 8), 500, 1);
    auto mp = mode_pairs(64, 8);
    pairs.insert(pairs.end(), mp.begin(), mp.end());
    CHECK(mollification_inequality_probe(pairs, {0.2, 0.1, 0.05}, 3).stable);
    CHECK_THROWS_AS(mode_pairs(8, 5), Error);
}

TEST_CASE("semiconcavity and Lipschitz probes") {
    auto L = small(4, 4);
    auto lin = tabulate(L, {0.0}, [](double, const GridDensity& m) { return linear_g(m); }, "linear");
    CHECK(semiconcavity_probe(lin, LatticeMetric::tv, 3, 500, 1).worst <= 1e-10);
    CHECK(semiconcavity_probe(lin, LatticeMetric::sobolev, 3, 500, 1).worst <= 1e-10);
    auto m0 = L->members[5];
    auto quad = tabulate(L, {0.0}, [&](double, const GridDensity& m) { return std::pow(sobolev_dual_norm(m, m0, 3), 2); }, "quad");
    auto q = semiconcavity_probe(quad, LatticeMetric::sobolev, 3, 500, 1);
    CHECK(q.triples > 10);
    CHECK(q.worst == doctest::Approx(2.0).epsilon(1e-8));

    // hopflax zero-noise value: finite TV constant, comparable across a refinement
    auto G = TerminalCost::d1_to_reference(lebesgue_cube(1));
    double c[2];
    int k = 0;
    for (int r : {4, 8}) {
        auto f = tabulate(small(4, r), {0.5}, hopflax_source(G, 1.0, 8, 1), "hopflax");
        c[k++] = semiconcavity_probe(f, LatticeMetric::tv, 3, 400, 2).worst;
    }
    double mean = 0.5 * (c[0] + c[1]);
    CHECK(std::isfinite(c[0]));
    CHECK(std::fabs(c[0] / mean - 1) <= 0.5);
    CHECK(std::fabs(c[1] / mean - 1) <= 0.5);

    // sup-convolution does not raise the H^-3 Lipschitz constant on the lattice
    auto S = small(8, 2);
    auto nu0 = cells_density(8, [](double x) { return 1 + 0.8 * std::cos(2 * kPi * x); });
    auto f = tabulate(S, {0.0}, d1_source(nu0), "d1");
    for (double e : {0.5, 2.0}) {
        auto sc = sup_convolution(f, e, 3);
        CHECK(lattice_lipschitz(sc.field, LatticeMetric::sobolev, 3, 1000, 1) <=
              lattice_lipschitz(f, LatticeMetric::sobolev, 3, 1000, 1) + 1e-12);
    }
}

TEST_CASE("regularization config and chain") {
    RegConfig c;
    c.lambda = 0.7;
    CHECK_THROWS_AS(c.validate(), Error);
    c.lambda = 0.1;
    c.delta = 0.2;
    c.eps = 1e-6;
    CHECK(c.in_regime());
    c.eps = 1e-4;
    CHECK_FALSE(c.in_regime());

    RegConfig cfg;
    cfg.z_resolution = 4;
    auto nu0 = cells_density(4, [](double x) { return 1 + 0.8 * std::cos(2 * kPi * x); });
    auto R = chain_budget_probe(simplex_lattice(4, 4), d1_source(nu0), {0.05, 0.1, 0.2}, {0.25, 0.5}, {0.05, 0.2}, cfg);
    CHECK(R.rows.size() == 12);
    CHECK(R.projection_error == 0.0);
    for (const auto& r : R.rows) {
        CHECK(r.in_regime);
        CHECK(r.error <= R.bound_constant * r.predictor + 1e-12);
    }
    // errors grow with delta and lambda
    CHECK(R.rows.back().error > R.rows.front().error);
    CHECK(R.fitted > 0.0);
}
