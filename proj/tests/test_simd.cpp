#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "mfclab/simd.hpp"

using namespace mfclab::simd;

namespace {

std::vector<double> rnd(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

void close(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-13));
}

}  // namespace

TEST_CASE("avx2 kernels match the scalar reference") {
    const KernelTable* v = avx2_kernels();
    if (!v) {
        MESSAGE("cpu lacks avx2/fma, equivalence test skipped");
        return;
    }
    const KernelTable& s = scalar_kernels();
    std::mt19937_64 rng(77);
    for (std::size_t n : {1u, 3u, 4u, 5u, 8u, 13u, 31u, 64u, 67u}) {
        auto v0 = rnd(rng, n), vp = rnd(rng, n), vm = rnd(rng, n), diff = rnd(rng, n, 0.0, 0.3);
        LfParams p{1e-4, 1.0 / 64, 2.0, 1.7};
        auto o1 = rnd(rng, n), o2 = o1;
        double m1 = s.lf_axis(o1.data(), v0.data(), vp.data(), vm.data(), diff.data(), n, p);
        double m2 = v->lf_axis(o2.data(), v0.data(), vp.data(), vm.data(), diff.data(), n, p);
        close(o1, o2);
        CHECK(m1 == doctest::Approx(m2).epsilon(1e-14));

        auto a = rnd(rng, n), b = rnd(rng, n), c = rnd(rng, n), d = rnd(rng, n), e = rnd(rng, n), f = rnd(rng, n);
        o1 = rnd(rng, n);
        o2 = o1;
        s.cross(o1.data(), v0.data(), a.data(), b.data(), c.data(), d.data(), e.data(), f.data(), 0.3, n);
        v->cross(o2.data(), v0.data(), a.data(), b.data(), c.data(), d.data(), e.data(), f.data(), 0.3, n);
        close(o1, o2);

        auto m = rnd(rng, n, 0.0, 1.0), vel = rnd(rng, n);
        std::vector<double> d1(n), d2(n);
        s.donor_cell(d1.data(), m.data(), vel.data(), n, 0.4);
        v->donor_cell(d2.data(), m.data(), vel.data(), n, 0.4);
        close(d1, d2);

        for (std::size_t dim : {1u, 2u, 3u, 5u}) {
            auto x = rnd(rng, n * dim), y = rnd(rng, dim);
            std::vector<double> q1(n), q2(n);
            s.sqdist_rows(q1.data(), x.data(), n, dim, y.data());
            v->sqdist_rows(q2.data(), x.data(), n, dim, y.data());
            close(q1, q2);
        }
        auto re = rnd(rng, n), im = rnd(rng, n), w = rnd(rng, n, 0.0, 1.0);
        CHECK(s.weighted_sumsq(re.data(), im.data(), w.data(), n) ==
              doctest::Approx(v->weighted_sumsq(re.data(), im.data(), w.data(), n)).epsilon(1e-13));
        CHECK(s.weighted_abs_diff(re.data(), im.data(), w.data(), n) ==
              doctest::Approx(v->weighted_abs_diff(re.data(), im.data(), w.data(), n)).epsilon(1e-13));
    }
}

TEST_CASE("dispatch picks a table") {
    const KernelTable& k = kernels();
    CHECK(k.name != nullptr);
}
