#include "mfclab/simd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>

namespace mfclab::simd {
namespace {

double lf_axis(double* out, const double* v, const double* vp, const double* vm,
               const double* diff, std::size_t n, const LfParams& p) {
    const double ih2 = 1.0 / (p.h * p.h), ih = 1.0 / p.h;
    const double gscale = p.n_particles / (2.0 * p.h);
    const double half_inv_n = 0.5 / p.n_particles;
    double pmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double lap = vp[i] + vm[i] - 2.0 * v[i];
        double pbar = gscale * (vp[i] - vm[i]);
        pmax = std::max(pmax, std::fabs(pbar));
        out[i] += p.dt * (diff[i] * lap * ih2 - half_inv_n * pbar * pbar + 0.5 * p.theta * lap * ih);
    }
    return pmax;
}

void cross(double* out, const double* v, const double* vpp, const double* vmm, const double* vpa,
           const double* vma, const double* vpb, const double* vmb, double coef, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] += coef * (2.0 * v[i] + vpp[i] + vmm[i] - vpa[i] - vma[i] - vpb[i] - vmb[i]);
}

void donor_cell(double* out, const double* m, const double* b, std::size_t n, double r) {
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t l = i == 0 ? n - 1 : i - 1;
        std::size_t rr = i + 1 == n ? 0 : i + 1;
        double in = std::max(b[l], 0.0) * m[l] + std::max(-b[rr], 0.0) * m[rr];
        out[i] = m[i] - r * std::fabs(b[i]) * m[i] + r * in;
    }
}

void sqdist_rows(double* out, const double* x, std::size_t n, std::size_t dim, const double* y) {
    for (std::size_t j = 0; j < n; ++j) {
        const double* row = x + j * dim;
        double s = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            double d = row[k] - y[k];
            s += d * d;
        }
        out[j] = s;
    }
}

double weighted_sumsq(const double* re, const double* im, const double* w, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += w[i] * (re[i] * re[i] + im[i] * im[i]);
    return s;
}

double weighted_abs_diff(const double* a, const double* b, const double* w, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += w[i] * std::fabs(a[i] - b[i]);
    return s;
}

const KernelTable kScalar{"scalar",      lf_axis,        cross,
                          donor_cell,    sqdist_rows,    weighted_sumsq,
                          weighted_abs_diff};

}  // namespace

const KernelTable& scalar_kernels() { return kScalar; }

const KernelTable& kernels() {
    static const KernelTable* chosen = [] {
        const char* env = std::getenv("MFCLAB_SIMD");
        if (env && std::strcmp(env, "scalar") == 0) return &kScalar;
        const KernelTable* v = avx2_kernels();
        return v ? v : &kScalar;
    }();
    return *chosen;
}

}  // namespace mfclab::simd
