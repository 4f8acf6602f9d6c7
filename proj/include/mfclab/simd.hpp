#pragma once

#include <cstddef>

namespace mfclab::simd {

struct LfParams {
    double dt;
    double h;
    double n_particles;
    double theta;  // Lax-Friedrichs dissipation
};

// Row kernels. Pointers may not alias `out` except where noted.
struct KernelTable {
    const char* name;
    // out += dt*(diff*lap/h^2 - (1/N) H_LF); returns max |N*(vp-vm)/(2h)|
    double (*lf_axis)(double* out, const double* v, const double* vp, const double* vm,
                      const double* diff, std::size_t n, const LfParams& p);
    // out += coef*(2v + vpp + vmm - vpa - vma - vpb - vmb)
    void (*cross)(double* out, const double* v, const double* vpp, const double* vmm,
                  const double* vpa, const double* vma, const double* vpb, const double* vmb,
                  double coef, std::size_t n);
    // periodic donor-cell transport, cell-centred velocities, r = dt/h
    void (*donor_cell)(double* out, const double* m, const double* b, std::size_t n, double r);
    // out[j] = |x_j - y|^2 for rows x_j of a row-major n x dim block
    void (*sqdist_rows)(double* out, const double* x, std::size_t n, std::size_t dim,
                        const double* y);
    double (*weighted_sumsq)(const double* re, const double* im, const double* w, std::size_t n);
    double (*weighted_abs_diff)(const double* a, const double* b, const double* w, std::size_t n);
};

const KernelTable& scalar_kernels();
// nullptr when the CPU lacks AVX2/FMA
const KernelTable* avx2_kernels();
// selected once; MFCLAB_SIMD=scalar forces the reference path
const KernelTable& kernels();

}  // namespace mfclab::simd
