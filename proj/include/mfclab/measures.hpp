#pragma once

#include <complex>
#include <cstdint>
#include <variant>
#include <vector>

#include "mfclab/common.hpp"

namespace mfclab {

// euclid is R^d; only the zero-noise Hopf-Lax code places atoms there
enum class DomainKind { torus, cube, euclid };

struct Domain {
    DomainKind kind = DomainKind::torus;
    int d = 1;

    static Domain torus(int d);
    static Domain cube(int d);
    static Domain euclid(int d);

    bool contains(const double* x) const;
    // squared ground distance (periodic on the torus)
    double dist2(const double* a, const double* b) const;
    bool operator==(const Domain&) const = default;
};

double wrap01(double x);
double torus_gap(double a, double b);  // |a-b| mod 1, in [0, 1/2]

struct EmpiricalMeasure {
    Domain domain;
    std::vector<double> atoms;    // size() * d, row-major
    std::vector<double> weights;  // sum 1

    std::size_t size() const { return weights.size(); }
    const double* atom(std::size_t i) const { return atoms.data() + i * domain.d; }
};

// cell masses on [0,1)^d (torus) or [0,1]^d (cube); axis 0 varies fastest
struct GridDensity {
    Domain domain;
    std::vector<int> resolution;
    std::vector<double> masses;

    std::size_t cells() const { return masses.size(); }
    double width(int axis) const { return 1.0 / resolution[axis]; }
    void center(std::size_t idx, double* out) const;
    std::size_t cell_of(const double* x) const;
};

using Measure = std::variant<EmpiricalMeasure, GridDensity>;

const Domain& domain_of(const Measure& m);

enum class KernelShape { periodic_gaussian, bump };

struct MollifierKernel {
    double delta = 0.1;
    KernelShape shape = KernelShape::periodic_gaussian;
    double radius = 6.0;  // support radius in units of delta

    static MollifierKernel gaussian(double delta) { return {delta, KernelShape::periodic_gaussian, 6.0}; }
    static MollifierKernel bump(double delta) { return {delta, KernelShape::bump, 1.0}; }
};

// validates weights / masses and returns the measure unchanged
EmpiricalMeasure make_empirical(Domain domain, std::vector<double> atoms, std::vector<double> weights);
GridDensity make_grid(Domain domain, std::vector<int> resolution, std::vector<double> masses);

EmpiricalMeasure empirical_from_points(const std::vector<double>& coords, Domain domain);
GridDensity uniform_grid(Domain domain, int per_axis);
GridDensity point_mass_grid(Domain domain, int per_axis, const double* x);
GridDensity bin_to_grid(const EmpiricalMeasure& m, const std::vector<int>& resolution);
// piecewise-constant refinement: each cell split into factor^d equal parts
GridDensity refine_grid(const GridDensity& g, int factor);

GridDensity mollify(const Measure& m, const MollifierKernel& kernel, int out_resolution);
GridDensity mix_with_lebesgue(const GridDensity& m, double lambda);
GridDensity mix_with_lebesgue(const Measure& m, double lambda, int resolution);
Measure translate(const Measure& m, const std::vector<double>& z);
GridDensity translate(const GridDensity& m, const std::vector<double>& z);
EmpiricalMeasure translate(const EmpiricalMeasure& m, const std::vector<double>& z);
std::vector<double> sample_iid(const Measure& m, std::size_t n, std::uint64_t seed);

// 1-D kernel pieces, exposed for oracle tests
double kernel_mass(const MollifierKernel& k, double a, double b);  // integral of rho over [a,b] on R
double kernel_first_moment(const MollifierKernel& k);              // E|U|, U ~ rho_delta
double kernel_symbol(const MollifierKernel& k, int freq);          // Fourier coefficient of rho
// circulant weights K[j] for uniform-in-cell sources on an n-cell circle
std::vector<double> kernel_cell_weights(const MollifierKernel& k, int n);

struct FourierCoeffs {
    int d = 1;
    int K = 0;
    std::vector<std::complex<double>> c;  // (2K+1)^d, index of k_a is k_a + K, axis 0 fastest

    std::size_t index(const int* k) const;
    std::complex<double> at(const int* k) const { return c[index(k)]; }
};

FourierCoeffs fourier_coeffs(const Measure& m, int K);
// signed difference m - m'
FourierCoeffs fourier_difference(const Measure& m, const Measure& mp, int K);

}  // namespace mfclab
