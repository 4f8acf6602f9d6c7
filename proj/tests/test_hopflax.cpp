#include <cmath>
#include <random>

#include "doctest.h"
#include "mfclab/hopflax.hpp"
#include "mfclab/metrics.hpp"
#include "oracles.hpp"

using namespace mfclab;

namespace {

const double T = 1.0, t = 0.5;  // T - t = 1/2

std::vector<double> centers(int N) {
    std::vector<double> x(N);
    for (int i = 0; i < N; ++i) x[i] = (i + 0.5) / N;
    return x;
}

EmpiricalMeasure atoms1(const std::vector<double>& x) {
    return make_empirical(Domain::euclid(1), x, std::vector<double>(x.size(), 1.0 / x.size()));
}

// golden-section min over y of int_0^1 |y-u| du + (y - x)^2
double oracle_n1(double x) {
    auto f = [&](double y) { return oracle::simpson([&](double u) { return std::fabs(y - u); }, 0, 1) + (y - x) * (y - x); };
    double a = -1, b = 2, g = (std::sqrt(5.0) - 1) / 2;
    for (int i = 0; i < 100; ++i) {
        double c = b - g * (b - a), d = a + g * (b - a);
        (f(c) < f(d) ? b : a) = f(c) < f(d) ? d : c;
    }
    return f(0.5 * (a + b));
}

}  // namespace

TEST_CASE("terminal costs") {
    auto leb = lebesgue_cube(1);
    auto G = TerminalCost::d1_to_reference(leb);
    CHECK(G.lipschitz == 1.0);
    std::vector<double> x{0.1, 0.3, 0.8};
    CHECK(G(atoms1(x)) == doctest::Approx(oracle::d1_atoms_vs_leb(x, {1. / 3, 1. / 3, 1. / 3})).epsilon(1e-5));
    auto Q = TerminalCost::mean_quadratic({1.0});
    CHECK(Q(atoms1(x)) == doctest::Approx(std::pow(0.4 - 1.0, 2)));
    CHECK(Q(leb) == doctest::Approx(0.25));
    // first variation of d1 matches a finite-difference mixture derivative
    auto nu = atoms1({0.2, 0.7});
    std::vector<double> ys{-0.1, 0.1, 0.45, 0.9, 1.3};
    auto fv = G.first_variation(nu, ys);
    double base = G(nu), eps = 1e-6;
    for (std::size_t k = 0; k < ys.size(); ++k) {
        auto fd = [&](double y) {
            auto p = nu;
            for (double& w : p.weights) w *= 1 - eps;
            p.atoms.push_back(y);
            p.weights.push_back(eps);
            return (G(p) - base) / eps;
        };
        CHECK(fv[k] == doctest::Approx(fd(ys[k])).epsilon(1e-4));
    }
}

TEST_CASE("vN examples") {
    std::vector<double> x{0.2, 0.9, 0.4};
    auto Z = vN_deterministic(t, x, TerminalCost::zero(), T);
    CHECK(Z.value == doctest::Approx(0.0));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(Z.argmin.atoms[i] == doctest::Approx(x[i]));

    auto Q = TerminalCost::mean_quadratic({1.0});
    for (int N : {1, 2, 4, 8}) {
        std::vector<double> xs(N);
        for (int i = 0; i < N; ++i) xs[i] = (i % 2 ? 1.0 : -1.0) * (0.1 + 0.05 * i);
        if (N % 2) xs[0] = 0.0;
        double mean = 0;
        for (double v : xs) mean += v / N;
        for (double& v : xs) v -= mean;
        auto s = vN_deterministic(t, xs, Q, T);
        CHECK(s.value == doctest::Approx(0.5).epsilon(1e-8));
        CHECK(s.value <= vN_objective(t, xs, xs, Q, T));
        CHECK(s.grad_norm < 1e-8);
    }

    auto G = TerminalCost::d1_to_reference(lebesgue_cube(1));
    auto s = vN_deterministic(t, {0.5}, G, T);
    CHECK(s.value == doctest::Approx(0.25).epsilon(1e-10));
    CHECK(s.value == doctest::Approx(oracle_n1(0.5)).epsilon(1e-6));
    CHECK(vN_deterministic(t, {0.1}, G, T).value == doctest::Approx(oracle_n1(0.1)).epsilon(1e-6));
    CHECK_THROWS_AS(vN_deterministic(T, {0.5}, G, T), Error);
}

TEST_CASE("vN exact 1-D solver against brute force") {
    auto G = TerminalCost::d1_to_reference(lebesgue_cube(1));
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-0.2, 1.2);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> x{u(rng), u(rng), u(rng)};
        auto s = vN_deterministic(t, x, G, T);
        auto f = [&](const std::vector<double>& z) {
            double q = 0;
            for (int i = 0; i < 3; ++i) q += (z[i] - x[i]) * (z[i] - x[i]);
            return oracle::d1_atoms_vs_leb(z, {1. / 3, 1. / 3, 1. / 3}, 20000) + q / 3.0;
        };
        // no random perturbation of the argmin, small or large, does better
        std::normal_distribution<double> nd(0, 1);
        for (int k = 0; k < 40; ++k) {
            double sc = k % 2 ? 1e-2 : 0.3;
            auto z = s.argmin.atoms;
            for (double& v : z) v += sc * nd(rng);
            CHECK(s.value <= f(z) + 1e-4);
        }
        CHECK(s.value == doctest::Approx(f(s.argmin.atoms)).epsilon(1e-4));
        // permutation invariance
        std::vector<double> xp{x[2], x[0], x[1]};
        CHECK(vN_deterministic(t, xp, G, T).value == doctest::Approx(s.value).epsilon(1e-12));
    }
}

TEST_CASE("vN time monotonicity") {
    auto G = TerminalCost::d1_to_reference(lebesgue_cube(1));
    std::vector<double> x{0.05, 0.3, 0.35};
    double prev = 1e300;
    for (double tt : {0.9, 0.7, 0.5, 0.2, 0.0}) {
        double v = vN_deterministic(tt, x, G, T).value;
        CHECK(v <= prev + 1e-12);
        prev = v;
    }
}

TEST_CASE("u upper candidates") {
    auto G = TerminalCost::d1_to_reference(lebesgue_cube(1));
    auto m = atoms1({0.5});
    CHECK(u_upper_candidates(t, m, G, T, {lebesgue_cube(1)}) == doctest::Approx(1.0 / 12).epsilon(1e-10));
    CHECK(u_upper_candidates(t, m, TerminalCost::zero(), T, {m}) == 0.0);
    CHECK(u_upper_candidates(t, m, G, T, {m}) <= G(m));
    CHECK_THROWS_AS(u_upper_candidates(t, m, G, T, {}), Error);
}

TEST_CASE("relaxed solver") {
    auto G = TerminalCost::d1_to_reference(lebesgue_cube(1));
    auto m = atoms1({0.5});
    CHECK(u_relaxed_atomic(t, m, TerminalCost::zero(), T, 4, 1).value == doctest::Approx(0.0));
    int M = 64;
    auto r = u_relaxed_atomic(t, m, G, T, M, 1);
    CHECK(r.value <= 1.0 / (4 * M) + 1.0 / 12 - 1.0 / (12.0 * M * M) + 1e-9);
    CHECK(r.value < 0.25);
    CHECK_THROWS_AS(u_relaxed_atomic(t, m, G, T, 0, 1), Error);

    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto Gc : {TerminalCost::zero(), TerminalCost::mean_quadratic({1.0}), G})
        for (int N : {1, 3, 7}) {
            std::vector<double> x(N);
            for (double& v : x) v = u(rng);
            auto vn = vN_deterministic(t, x, Gc, T);
            auto rel = u_relaxed_atomic(t, atoms1(x), Gc, T, N + 4, 2, &vn.argmin.atoms);
            CHECK(rel.value <= vn.value + 1e-9);
        }
}

TEST_CASE("lower bound and replication") {
    auto G = TerminalCost::d1_to_reference(lebesgue_cube(1));
    CHECK(vN_lower_quantization(t, {0.5}, G, T) == doctest::Approx(0.25));
    CHECK(vN_lower_quantization(t, centers(4), G, T) == doctest::Approx(1.0 / 16));
    for (int N : {1, 2, 5})
        CHECK(vN_lower_quantization(t, centers(N), G, T) <= vN_deterministic(t, centers(N), G, T).value + 1e-12);
    CHECK_THROWS_AS(vN_lower_quantization(t, {0.5}, TerminalCost::zero(), T), Error);

    auto z = replication_monotonicity(t, {0.3, 0.6}, TerminalCost::zero(), T, {1, 2, 4});
    for (double v : z) CHECK(v == doctest::Approx(0.0));
    auto q = replication_monotonicity(t, {-0.2, 0.2}, TerminalCost::mean_quadratic({1.0}), T, {1, 2, 4, 8});
    for (double v : q) CHECK(v == doctest::Approx(0.5).epsilon(1e-8));
    auto d = replication_monotonicity(t, {0.5}, G, T, {1, 2, 4, 8, 16});
    CHECK(d[0] == doctest::Approx(0.25));
    for (std::size_t i = 1; i < d.size(); ++i) CHECK(d[i] < d[i - 1]);
    CHECK(d.back() >= 1.0 / 12 - 1e-9);
    CHECK_THROWS_AS(replication_monotonicity(t, {0.5}, G, T, {0}), Error);
}

TEST_CASE("L-convexity check") {
    CHECK(lconvex_check(TerminalCost::mean_quadratic({1.0}), 50, 3).pass);
    auto g = TerminalCost::linear(1, [](const double* x) { return x[0] * x[0]; },
                                  [](const double* x, double* gr) { gr[0] = 2 * x[0]; });
    CHECK(lconvex_check(g, 50, 3).pass);
    auto c = lconvex_check(TerminalCost::d1_to_reference(lebesgue_cube(1)), 50, 3);
    CHECK_FALSE(c.pass);
    CHECK(c.worst > 0.05);
}

TEST_CASE("moment transfer") {
    auto z = moment_transfer_check(t, {0.3, 0.6}, TerminalCost::zero(), T, 5, 0.0);
    CHECK(z.pass);
    CHECK(z.lhs == doctest::Approx(z.rhs));
    auto G = TerminalCost::d1_to_reference(lebesgue_cube(1));
    auto d = moment_transfer_check(t, {0.5}, G, T, 5, 1.0);
    CHECK(d.pass);
    CHECK_THROWS_AS(moment_transfer_check(t, {0.5}, G, T, 4, 1.0), Error);
    CHECK_THROWS_AS(moment_transfer_check(t, {0.5}, G, T, 5, -1.0), Error);
}

TEST_CASE("gap report small") {
    auto G = TerminalCost::d1_to_reference(lebesgue_cube(1));
    auto z = gap_report(t, {centers(2), centers(4)}, TerminalCost::zero(), T);
    for (const auto& r : z.rows) CHECK(r.gap == doctest::Approx(0.0));
    auto q = gap_report(t, {centers(2), centers(4)}, TerminalCost::mean_quadratic({1.0}), T);
    for (const auto& r : q.rows) CHECK(std::fabs(r.gap) <= 1e-6);
    auto g = gap_report(t, {centers(1), centers(4), centers(8), centers(16)}, G, T);
    for (const auto& r : g.rows) CHECK(r.gap >= 1.0 / (4 * r.N) - 1.0 / (12.0 * r.N * r.N) - 1e-6);
    CHECK(g.rows[0].gap >= 1.0 / 6 - 1e-9);
    CHECK(g.table.slope < -0.8);
}

TEST_CASE("quantization gap bound and strict gap") {
    auto G = TerminalCost::d1_to_reference(lebesgue_cube(1));
    for (int N : {1, 4}) CHECK(quantization_gap_check(t, centers(N), G, T, 1.0).pass);
    auto s = strict_gap_certificate(t, T, 0.1);
    CHECK(s.vN == doctest::Approx(0.25));
    CHECK(s.u_upper <= 1.0 / 12 + 1e-9);
    CHECK(s.certified);
}
