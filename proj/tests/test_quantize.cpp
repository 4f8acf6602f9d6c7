#include <cmath>

#include "doctest.h"
#include "mfclab/metrics.hpp"
#include "mfclab/quantize.hpp"
#include "oracles.hpp"

using namespace mfclab;

TEST_CASE("rate exponents") {
    auto e2 = rate_exponents(2), e3 = rate_exponents(3), e1 = rate_exponents(1);
    CHECK(e2.gamma == Rational{1, 25});
    CHECK(e2.gamma_prime == Rational{1, 9});
    CHECK(e2.s_star == 4);
    CHECK(e3.gamma == Rational{1, 25});
    CHECK(e3.gamma_prime == Rational{1, 9});
    CHECK(e3.s_star == 4);
    CHECK(e1.s_star == 3);
    CHECK(2 * e1.s_star + 1 == 7);
    for (int d = 1; d <= 6; ++d) {
        auto e = rate_exponents(d);
        CHECK(e.gamma_prime == Rational{1, 2L * e.s_star + 1});
        CHECK(2 * e.s_star + 1 == (d % 2 ? d + 6 : d + 7));
    }
    CHECK_THROWS_AS(rate_exponents(0), Error);
}

TEST_CASE("fournier guillin rate") {
    CHECK(fournier_guillin_rate(100, 1) == doctest::Approx(0.1));
    CHECK(fournier_guillin_rate(8, 3) == doctest::Approx(0.5));
    CHECK(fournier_guillin_rate(std::exp(2.0), 2) == doctest::Approx(2.0 / std::exp(1.0)));
}

TEST_CASE("log-log fit") {
    RateTable t;
    for (double N : {2.0, 4.0, 8.0, 16.0}) t.rows.push_back({N, 1.0 / N, 0.0});
    CHECK(fit_loglog_slope(t).slope == doctest::Approx(-1.0).epsilon(1e-14));
    RateTable u;
    for (double N : {2.0, 5.0, 9.0}) u.rows.push_back({N, 3.0 / std::sqrt(N), 0.0});
    auto f = fit_loglog_slope(u);
    CHECK(f.slope == doctest::Approx(-0.5).epsilon(1e-13));
    CHECK(f.intercept == doctest::Approx(std::log(3.0)).epsilon(1e-13));
    RateTable one;
    one.rows.push_back({1.0, 1.0, 0.0});
    CHECK_THROWS_AS(fit_loglog_slope(one), Error);
    u.rows[1].value = 0.0;
    CHECK_THROWS_AS(fit_loglog_slope(u), Error);
}

TEST_CASE("grid center config") {
    auto a = grid_center_config(4, 1);
    CHECK(a.atoms == std::vector<double>{0.125, 0.375, 0.625, 0.875});
    auto b = grid_center_config(1, 1);
    CHECK(b.atoms[0] == 0.5);
    CHECK(std::pow(d2(b, uniform_grid(Domain::cube(1), 1)).value, 2) ==
          doctest::Approx(oracle::simpson([](double u) { return (0.5 - u) * (0.5 - u); }, 0, 1)).epsilon(1e-12));
    auto c = grid_center_config(4, 2);
    CHECK(c.size() == 4);
    for (double v : c.atoms) CHECK((v == 0.25 || v == 0.75));
    CHECK(grid_center_config(5, 2).size() == 5);
}

TEST_CASE("lloyd quantizer") {
    auto leb = uniform_grid(Domain::cube(1), 1);
    auto r = lloyd_quantizer(leb, 1, 10, 3);
    CHECK(r.atoms.atoms[0] == doctest::Approx(0.5));
    CHECK(r.d2_error * r.d2_error == doctest::Approx(1.0 / 12));
    auto r4 = lloyd_quantizer(leb, 4, 10, 3);
    CHECK(r4.d2_error <= 1.0 / (8.0 * std::sqrt(3.0)) + 1e-12);
    auto pt = empirical_from_points({0.3, 0.6}, Domain::cube(2));
    pt = make_empirical(Domain::cube(2), {0.3, 0.6}, {1.0});
    auto rp = lloyd_quantizer(pt, 3, 5, 1, 2);
    CHECK(rp.d2_error == doctest::Approx(0.0));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(rp.atoms.atom(i)[0] == doctest::Approx(0.3));
        CHECK(rp.atoms.atom(i)[1] == doctest::Approx(0.6));
    }
    CHECK_THROWS_AS(lloyd_quantizer(leb, 2, 0, 1), Error);
    // feasibility dominance and monotone reporting in d = 2
    auto leb2 = uniform_grid(Domain::cube(2), 1);
    double prev = 1e9;
    for (int N : {1, 2, 4, 9}) {
        auto q = lloyd_quantizer(leb2, N, 8, 7, 2);
        int k = static_cast<int>(std::lround(std::sqrt(N)));
        if (k * k == N) {
            // each axis of a centred cell contributes the variance of a uniform on [0, 1/k]
            double var = oracle::simpson([&](double u) { return (u - 0.5 / k) * (u - 0.5 / k); }, 0, 1.0 / k) * k;
            CHECK(q.d2_error <= std::sqrt(2 * var) + 1e-12);
        }
        CHECK(q.d2_error <= prev + 1e-12);
        prev = std::min(prev, q.d2_error);
    }
}

TEST_CASE("d1 quantization value") {
    CHECK(d1_quantization_value(1, 1).value == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(d1_quantization_value(4, 1).value == doctest::Approx(1.0 / 16).epsilon(1e-12));
    for (int N : {2, 3, 5}) {
        std::vector<double> c(N), w(N, 1.0 / N);
        for (int i = 0; i < N; ++i) c[i] = (i + 0.5) / N;
        CHECK(d1_quantization_value(N, 1).value <= oracle::d1_atoms_vs_leb(c, w) + 1e-5);
    }
    auto v4 = d1_quantization_value(4, 2);
    double md = 0.0;
    const int Q = 1000;
    for (int i = 0; i < Q; ++i)
        for (int j = 0; j < Q; ++j) md += std::hypot((i + 0.5) / Q - 0.5, (j + 0.5) / Q - 0.5);
    md /= double(Q) * Q;
    CHECK(v4.value <= md / 2 + 1e-6);
    CHECK(v4.lower_bound <= v4.value);
    RateTable t;
    for (int N = 4; N <= 256; N *= 2) t.rows.push_back({double(N), d1_quantization_value(N, 1).value, 0.0});
    CHECK(fit_loglog_slope(t).slope == doctest::Approx(-1.0).epsilon(0.05));
}

TEST_CASE("empirical rate") {
    auto p = empirical_from_points({0.0}, Domain::torus(1));
    auto t = empirical_rate_mc(p, {4, 8, 16}, 30, 1);
    for (const auto& r : t.rows) CHECK(r.value == 0.0);
    auto leb = uniform_grid(Domain::torus(1), 1);
    auto a = empirical_rate_mc(leb, {16, 64, 256}, 40, 9);
    auto b = empirical_rate_mc(leb, {16, 64, 256}, 40, 9);
    CHECK(a.rows[2].value == b.rows[2].value);
    CHECK(a.slope == doctest::Approx(-0.5).epsilon(0.3));
}
