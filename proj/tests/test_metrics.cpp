#include <cmath>
#include <random>

#include "doctest.h"
#include "mfclab/metrics.hpp"
#include "mfclab/transport.hpp"
#include "oracles.hpp"

using namespace mfclab;

namespace {

GridDensity random_grid(std::mt19937_64& rng, Domain dom, int res) {
    GridDensity g = uniform_grid(dom, res);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double s = 0.0;
    for (double& v : g.masses) s += (v = u(rng) * u(rng));
    for (double& v : g.masses) v /= s;
    return g;
}

EmpiricalMeasure random_weighted(std::mt19937_64& rng, Domain dom, int n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> x(n * dom.d), w(n);
    double s = 0.0;
    for (double& v : x) v = u(rng);
    for (double& v : w) s += (v = 0.1 + u(rng));
    for (double& v : w) v /= s;
    return make_empirical(dom, x, w);
}

std::vector<double> centers(int N) {
    std::vector<double> c(N);
    for (int i = 0; i < N; ++i) c[i] = (i + 0.5) / N;
    return c;
}

}  // namespace

TEST_CASE("tv distance") {
    auto a = empirical_from_points({0.0}, Domain::torus(1));
    auto b = empirical_from_points({0.5}, Domain::torus(1));
    CHECK(tv_distance(a, a) == 0.0);
    CHECK(tv_distance(a, b) == 1.0);
    std::mt19937_64 rng(1);
    for (int t = 0; t < 10; ++t) {
        auto m = random_grid(rng, Domain::torus(1), 32), mp = random_grid(rng, Domain::torus(1), 32);
        double lhs = tv_distance(mix_with_lebesgue(m, 0.3), mix_with_lebesgue(mp, 0.3));
        CHECK(std::fabs(lhs - 0.7 * tv_distance(m, mp)) < 1e-12);
    }
    CHECK_THROWS_AS(tv_distance(a, empirical_from_points({0.5}, Domain::cube(1))), Error);
}

TEST_CASE("d1 and d2 examples") {
    auto a = empirical_from_points({0.0}, Domain::torus(1));
    auto b = empirical_from_points({0.5}, Domain::torus(1));
    CHECK(d1(a, b).value == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(d1(a, a).value == doctest::Approx(0.0));
    auto leb = uniform_grid(Domain::cube(1), 1);
    for (int N : {1, 4, 7}) {
        auto c = centers(N);
        auto m = empirical_from_points(c, Domain::cube(1));
        double want = oracle::d1_atoms_vs_leb(c, m.weights);
        CHECK(d1(m, leb).value == doctest::Approx(want).epsilon(1e-5));
        // squared quantile cost on each interval
        double q = 0.0;
        for (int i = 0; i < N; ++i)
            q += oracle::simpson([&](double u) { return (c[i] - u) * (c[i] - u); }, double(i) / N, double(i + 1) / N, 100);
        CHECK(std::pow(d2(m, leb).value, 2) == doctest::Approx(q).epsilon(1e-10));
    }
    CHECK(d1(empirical_from_points(centers(4), Domain::cube(1)), leb).value == doctest::Approx(1.0 / 16).epsilon(1e-12));
    auto p = empirical_from_points({0.2}, Domain::cube(1)), r = empirical_from_points({0.9}, Domain::cube(1));
    CHECK(d2(p, r).value == doctest::Approx(0.7).epsilon(1e-12));
    std::mt19937_64 rng(4);
    for (int t = 0; t < 20; ++t) {
        Domain dom = t % 2 ? Domain::torus(1) : Domain::cube(1);
        auto m = random_weighted(rng, dom, 5);
        auto mp = random_grid(rng, dom, 16);
        CHECK(d2(m, mp).value >= d1(m, mp).value - 1e-12);
    }
}

TEST_CASE("circle transport agrees with assignment") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 50; ++t) {
        int N = 1 + static_cast<int>(u(rng) * 64);
        std::vector<double> x(N), y(N);
        for (double& v : x) v = u(rng);
        for (double& v : y) v = u(rng);
        auto m = empirical_from_points(x, Domain::torus(1)), mp = empirical_from_points(y, Domain::torus(1));
        std::vector<double> c1(N * N), c2(N * N);
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < N; ++j) {
                double g = torus_gap(x[i], y[j]);
                c1[i * N + j] = g;
                c2[i * N + j] = g * g;
            }
        CHECK(std::fabs(d1(m, mp).value - solve_assignment(c1, N).cost / N) < 1e-10);
        CHECK(std::fabs(std::pow(d2(m, mp).value, 2) - solve_assignment(c2, N).cost / N) < 1e-10);
    }
}

TEST_CASE("assignment and flow against brute force and 1-D formulas") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int n = 1; n <= 7; ++n) {
        std::vector<double> c(n * n);
        for (double& v : c) v = u(rng);
        CHECK(solve_assignment(c, n).cost == doctest::Approx(oracle::brute_assignment(c, n)).epsilon(1e-12));
    }
    for (int t = 0; t < 20; ++t) {
        Domain dom = t % 2 ? Domain::torus(1) : Domain::cube(1);
        auto m = random_weighted(rng, dom, 3 + t % 9), mp = random_weighted(rng, dom, 2 + t % 5);
        for (int p : {1, 2}) {
            std::vector<double> cost(m.size() * mp.size());
            for (std::size_t i = 0; i < m.size(); ++i)
                for (std::size_t j = 0; j < mp.size(); ++j) {
                    double g2 = dom.dist2(m.atom(i), mp.atom(j));
                    cost[i * mp.size() + j] = p == 2 ? g2 : std::sqrt(g2);
                }
            auto r = solve_transport(m.weights, mp.weights, cost);
            double want = wasserstein(m, mp, p).value;
            if (p == 2) want *= want;
            CHECK(r.cost == doctest::Approx(want).epsilon(1e-9));
            for (std::size_t i = 0; i < m.size(); ++i) {
                double row = 0.0;
                for (std::size_t j = 0; j < mp.size(); ++j) row += r.plan[i * mp.size() + j];
                CHECK(row == doctest::Approx(m.weights[i]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("metric axioms on random triples") {
    std::mt19937_64 rng(17);
    for (int t = 0; t < 100; ++t) {
        Domain dom = t % 3 == 0 ? Domain::cube(1) : (t % 3 == 1 ? Domain::torus(1) : Domain::torus(2));
        EmpiricalMeasure a, b, c;
        if (dom.d == 2) {
            std::uniform_real_distribution<double> u(0.0, 1.0);
            auto pts = [&] {
                std::vector<double> x(12);
                for (double& v : x) v = u(rng);
                return empirical_from_points(x, dom);
            };
            a = pts(), b = pts(), c = pts();
        } else {
            a = random_weighted(rng, dom, 4), b = random_weighted(rng, dom, 6), c = random_weighted(rng, dom, 3);
        }
        for (int p : {1, 2}) {
            double ab = wasserstein(a, b, p).value, ba = wasserstein(b, a, p).value;
            CHECK(std::fabs(ab - ba) < 1e-12);
            CHECK(wasserstein(a, c, p).value <= ab + wasserstein(b, c, p).value + 1e-9);
        }
        CHECK(tv_distance(a, b) == tv_distance(b, a));
        CHECK(tv_distance(a, c) <= tv_distance(a, b) + tv_distance(b, c) + 1e-9);
    }
}

TEST_CASE("grid transport in d = 2") {
    auto u = uniform_grid(Domain::torus(2), 4);
    auto r = d1(u, u);
    CHECK(r.value == doctest::Approx(0.0));
    CHECK(r.error_bound > 0.0);
    std::vector<double> shifted(16, 0.0);
    shifted[5] = 1.0;
    auto g = make_grid(Domain::torus(2), {4, 4}, shifted);
    shifted.assign(16, 0.0);
    shifted[0] = 1.0;
    auto g0 = make_grid(Domain::torus(2), {4, 4}, shifted);
    CHECK(d1(g, g0).value == doctest::Approx(std::sqrt(2.0) / 4));
    CHECK_THROWS_AS(d1(g, empirical_from_points({0.1, 0.1}, Domain::torus(2))), Error);
}

TEST_CASE("sobolev dual norm") {
    auto a = empirical_from_points({0.0}, Domain::torus(1));
    auto b = empirical_from_points({0.5}, Domain::torus(1));
    CHECK(sobolev_dual_norm(a, a, 3) == 0.0);
    double s = 0.0;
    for (int k = 1; k <= 10000; k += 2) s += 2.0 * 4.0 / std::pow(1.0 + std::pow(k, 3.0), 2);
    CHECK(sobolev_dual_norm(a, b, 3) == doctest::Approx(std::sqrt(s)).epsilon(1e-8));
    CHECK(sobolev_dual_norm(a, b, 3) == doctest::Approx(1.41803).epsilon(1e-5));
    CHECK_THROWS_AS(sobolev_dual_norm(a, b, 1), Error);
    CHECK_THROWS_AS(sobolev_dual_norm(fourier_difference(a, b, 3), 0), Error);
}

TEST_CASE("s = 0 weighted norm is half the L2 norm") {
    std::mt19937_64 rng(31);
    const int R = 16, K = 4000;
    for (int t = 0; t < 5; ++t) {
        auto m = random_grid(rng, Domain::torus(1), R), mp = random_grid(rng, Domain::torus(1), R);
        double l2 = 0.0, S = 0.0;
        for (int j = 0; j < R; ++j) {
            double dm = m.masses[j] - mp.masses[j];
            l2 += dm * dm * R;
            S += std::fabs(dm);
        }
        double tail = 2.0 * R * R * S * S / (kPi * kPi * K);
        double f = fourier_weighted_norm(fourier_difference(m, mp, K), 0.0);
        CHECK(std::fabs(4.0 * f * f - l2) <= tail);
    }
}

TEST_CASE("H^-3 bounded by a fixed multiple of d1") {
    // |q(k)| <= 2 pi |k| d1 gives the universal constant below
    double cstar = 0.0;
    for (int k = 1; k <= 100000; ++k) cstar += 2.0 * 4 * kPi * kPi * k * k / std::pow(1.0 + std::pow(k, 3.0), 2);
    cstar = std::sqrt(cstar);
    std::mt19937_64 rng(41);
    std::vector<double> worst;
    for (int R : {32, 64, 128}) {
        double w = 0.0;
        for (int t = 0; t < 20; ++t) {
            auto m = random_grid(rng, Domain::torus(1), R), mp = random_grid(rng, Domain::torus(1), R);
            double ratio = sobolev_dual_norm(m, mp, 3) / d1(m, mp).value;
            CHECK(ratio <= cstar);
            w = std::max(w, ratio);
        }
        worst.push_back(w);
    }
    double lo = *std::min_element(worst.begin(), worst.end()), hi = *std::max_element(worst.begin(), worst.end());
    CHECK(hi / lo < 1.5);
}

TEST_CASE("w2inf dual estimate") {
    auto a = empirical_from_points({0.1, 0.3}, Domain::torus(1));
    auto b = empirical_from_points({0.6}, Domain::torus(1));
    CHECK(w2inf_dual_estimate(a, a, 3, 1) == 0.0);
    double prev = 0.0;
    for (int trials : {1, 2, 4, 8}) {
        double e = w2inf_dual_estimate(a, b, trials, 5);
        CHECK(e >= prev);
        CHECK(e <= d1(a, b).value);
        CHECK(e > 0.0);
        prev = e;
    }
    std::mt19937_64 rng(2);
    auto g = random_grid(rng, Domain::torus(2), 8), gp = random_grid(rng, Domain::torus(2), 8);
    double e2 = w2inf_dual_estimate(g, gp, 3, 7);
    CHECK(e2 >= 0.0);
    CHECK(e2 <= d1(g, gp).value + d1(g, gp).error_bound);
}
