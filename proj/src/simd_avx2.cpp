#include "mfclab/simd.hpp"

#include <algorithm>
#include <cmath>

#if defined(__x86_64__) || defined(__i386__)
#include <immintrin.h>
#define MFCLAB_X86 1
#endif

namespace mfclab::simd {

#ifdef MFCLAB_X86
namespace {

#define AVX2_FN __attribute__((target("avx2,fma")))

AVX2_FN inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

AVX2_FN inline double hmax(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_max_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_max_sd(lo, sh));
}

AVX2_FN inline __m256d vabs(__m256d v) {
    return _mm256_andnot_pd(_mm256_set1_pd(-0.0), v);
}

AVX2_FN double lf_axis(double* out, const double* v, const double* vp, const double* vm,
                       const double* diff, std::size_t n, const LfParams& p) {
    const double ih2 = 1.0 / (p.h * p.h), ih = 1.0 / p.h;
    const double gscale = p.n_particles / (2.0 * p.h);
    const double half_inv_n = 0.5 / p.n_particles;
    const __m256d vih2 = _mm256_set1_pd(ih2), vtheta = _mm256_set1_pd(0.5 * p.theta * ih);
    const __m256d vg = _mm256_set1_pd(gscale), vhn = _mm256_set1_pd(half_inv_n);
    const __m256d vdt = _mm256_set1_pd(p.dt), two = _mm256_set1_pd(2.0);
    __m256d pm = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d a = _mm256_loadu_pd(vp + i), b = _mm256_loadu_pd(vm + i);
        __m256d c = _mm256_loadu_pd(v + i);
        __m256d lap = _mm256_fnmadd_pd(two, c, _mm256_add_pd(a, b));
        __m256d pbar = _mm256_mul_pd(vg, _mm256_sub_pd(a, b));
        pm = _mm256_max_pd(pm, vabs(pbar));
        __m256d dcoef = _mm256_fmadd_pd(_mm256_loadu_pd(diff + i), vih2, vtheta);
        __m256d rhs = _mm256_fnmadd_pd(vhn, _mm256_mul_pd(pbar, pbar), _mm256_mul_pd(dcoef, lap));
        _mm256_storeu_pd(out + i, _mm256_fmadd_pd(vdt, rhs, _mm256_loadu_pd(out + i)));
    }
    double pmax = hmax(pm);
    for (; i < n; ++i) {
        double lap = vp[i] + vm[i] - 2.0 * v[i];
        double pbar = gscale * (vp[i] - vm[i]);
        pmax = std::max(pmax, std::fabs(pbar));
        out[i] += p.dt * ((diff[i] * ih2 + 0.5 * p.theta * ih) * lap - half_inv_n * pbar * pbar);
    }
    return pmax;
}

AVX2_FN void cross(double* out, const double* v, const double* vpp, const double* vmm,
                   const double* vpa, const double* vma, const double* vpb, const double* vmb,
                   double coef, std::size_t n) {
    const __m256d vc = _mm256_set1_pd(coef), two = _mm256_set1_pd(2.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d s = _mm256_add_pd(_mm256_loadu_pd(vpp + i), _mm256_loadu_pd(vmm + i));
        s = _mm256_fmadd_pd(two, _mm256_loadu_pd(v + i), s);
        __m256d t = _mm256_add_pd(_mm256_loadu_pd(vpa + i), _mm256_loadu_pd(vma + i));
        t = _mm256_add_pd(t, _mm256_add_pd(_mm256_loadu_pd(vpb + i), _mm256_loadu_pd(vmb + i)));
        _mm256_storeu_pd(out + i, _mm256_fmadd_pd(vc, _mm256_sub_pd(s, t), _mm256_loadu_pd(out + i)));
    }
    for (; i < n; ++i)
        out[i] += coef * (2.0 * v[i] + vpp[i] + vmm[i] - vpa[i] - vma[i] - vpb[i] - vmb[i]);
}

AVX2_FN void donor_cell(double* out, const double* m, const double* b, std::size_t n, double r) {
    auto edge = [&](std::size_t i) {
        std::size_t l = i == 0 ? n - 1 : i - 1;
        std::size_t rr = i + 1 == n ? 0 : i + 1;
        double in = std::max(b[l], 0.0) * m[l] + std::max(-b[rr], 0.0) * m[rr];
        out[i] = m[i] - r * std::fabs(b[i]) * m[i] + r * in;
    };
    if (n < 6) {
        for (std::size_t i = 0; i < n; ++i) edge(i);
        return;
    }
    edge(0);
    const __m256d vr = _mm256_set1_pd(r), zero = _mm256_setzero_pd();
    std::size_t i = 1;
    for (; i + 4 <= n - 1; i += 4) {
        __m256d mc = _mm256_loadu_pd(m + i), bc = _mm256_loadu_pd(b + i);
        __m256d bl = _mm256_max_pd(_mm256_loadu_pd(b + i - 1), zero);
        __m256d br = _mm256_max_pd(_mm256_sub_pd(zero, _mm256_loadu_pd(b + i + 1)), zero);
        __m256d in = _mm256_fmadd_pd(bl, _mm256_loadu_pd(m + i - 1),
                                     _mm256_mul_pd(br, _mm256_loadu_pd(m + i + 1)));
        __m256d outv = _mm256_fnmadd_pd(_mm256_mul_pd(vr, vabs(bc)), mc, mc);
        _mm256_storeu_pd(out + i, _mm256_fmadd_pd(vr, in, outv));
    }
    for (; i < n; ++i) edge(i);
}

AVX2_FN void sqdist_rows(double* out, const double* x, std::size_t n, std::size_t dim,
                         const double* y) {
    for (std::size_t j = 0; j < n; ++j) {
        const double* row = x + j * dim;
        __m256d acc = _mm256_setzero_pd();
        std::size_t k = 0;
        for (; k + 4 <= dim; k += 4) {
            __m256d d = _mm256_sub_pd(_mm256_loadu_pd(row + k), _mm256_loadu_pd(y + k));
            acc = _mm256_fmadd_pd(d, d, acc);
        }
        double s = hsum(acc);
        for (; k < dim; ++k) {
            double d = row[k] - y[k];
            s += d * d;
        }
        out[j] = s;
    }
}

AVX2_FN double weighted_sumsq(const double* re, const double* im, const double* w, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d a = _mm256_loadu_pd(re + i), b = _mm256_loadu_pd(im + i);
        __m256d s = _mm256_fmadd_pd(b, b, _mm256_mul_pd(a, a));
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(w + i), s, acc);
    }
    double s = hsum(acc);
    for (; i < n; ++i) s += w[i] * (re[i] * re[i] + im[i] * im[i]);
    return s;
}

AVX2_FN double weighted_abs_diff(const double* a, const double* b, const double* w, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d d = vabs(_mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(w + i), d, acc);
    }
    double s = hsum(acc);
    for (; i < n; ++i) s += w[i] * std::fabs(a[i] - b[i]);
    return s;
}

const KernelTable kAvx2{"avx2",      lf_axis,        cross,
                        donor_cell,  sqdist_rows,    weighted_sumsq,
                        weighted_abs_diff};

}  // namespace

const KernelTable* avx2_kernels() {
    static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return ok ? &kAvx2 : nullptr;
}

#else

const KernelTable* avx2_kernels() { return nullptr; }

#endif

}  // namespace mfclab::simd
