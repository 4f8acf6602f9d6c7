#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mfclab/measures.hpp"
#include "mfclab/quantize.hpp"

namespace mfclab {

// c0 + sum_k a_k cos(2 pi k x) + b_k sin(2 pi k x), k = 1..
struct TrigFunction {
    double c0 = 0.0;
    std::vector<double> a, b;

    static TrigFunction constant(double c) { return {c, {}, {}}; }
    double operator()(double x) const;
    double derivative(double x) const;
    double max_abs() const;        // bound on sup |f|
    double max_abs_deriv() const;  // bound on sup |f'|
    double min_value(int samples = 4096) const;
    // average over [lo, hi]
    double cell_average(double lo, double hi) const;
    // convolution with a symmetric mollifier (Fourier multipliers)
    TrigFunction mollified(const MollifierKernel& k) const;
    bool is_constant() const;
};

// C(m) = int lin dm + (kappa/2) (int mom dm)^2
struct CostSpec {
    TrigFunction lin;
    TrigFunction mom;
    double kappa = 0.0;

    bool is_zero() const;
    bool is_linear() const { return kappa == 0.0; }
    double on_config(const double* x, int N) const;
    double on_grid(const GridDensity& m) const;
    double on_empirical(const EmpiricalMeasure& m) const;
    CostSpec mollified(double eta) const;
};

enum class HamiltonianKind { quadratic };

struct ProblemData {
    double T = 1.0;
    double eta = 0.0;
    TrigFunction A = TrigFunction::constant(0.0);
    double A0 = 0.0;
    HamiltonianKind H = HamiltonianKind::quadratic;
    CostSpec F;
    CostSpec G;
    bool mollify_costs = true;  // use F^eta, G^eta

    void validate() const;
    double max_A() const { return A.max_abs(); }
};

struct ValueTensor {
    int N = 1;
    int resolution = 0;
    double dt = 0.0;
    double theta = 0.0;
    std::vector<double> times;   // saved slices, increasing
    std::vector<double> values;  // slice-major, then axis 0 fastest
    std::size_t slice_size() const;
    const double* slice(std::size_t s) const { return values.data() + s * slice_size(); }
    double h() const { return 1.0 / resolution; }
    // multilinear periodic interpolation; t is clamped to the saved range
    double interpolate(double t, const double* x) const;
    double at_node(std::size_t s, const std::vector<int>& idx) const;
};

struct HjbOptions {
    double dt = 0.0;      // 0 = 0.9 of the CFL bound
    double theta = 0.0;   // Lax-Friedrichs constant; 0 = automatic
    int save_slices = 17;
};

struct HjbStability {
    double dt_max = 0.0;
    double min_offdiag = 0.0;  // smallest neighbour coefficient (must be >= 0)
    bool dominant = true;
};
HjbStability hjb_stability(const ProblemData& data, int N, int resolution, double theta);

ValueTensor solve_hjb_nparticle(const ProblemData& data, int N, int resolution, HjbOptions opt = {});

struct GradientProbe {
    double grad = 0.0;  // max_i ||D_{x^i} V||_inf over saved slices
    double hess = 0.0;  // max_i ||D^2_{x^i x^i} V||_inf
};
GradientProbe hjb_gradient_probe(const ValueTensor& V);

struct HolderCheck {
    std::vector<std::pair<double, double>> rows;  // (gap, max |V(t+gap)-V(t)| / sqrt(gap))
    double constant = 0.0;
    bool stable = false;
};
HolderCheck time_holder_check(const ValueTensor& V);

// exact eta = 0 value at the grid nodes for A = 0, A0 = 0, F = 0 (N = 1 by global scan)
std::vector<double> inviscid_oracle(const ProblemData& data, int N, int resolution, double t);
RateTable viscosity_rate_probe(const ProblemData& data, int N, const std::vector<double>& etas, int resolution);

struct CommonNoisePath {
    double t0 = 0.0;
    double dt = 0.0;
    double sigma0 = 0.0;
    std::vector<double> W;  // W[0] = 0, W[k] = W0(t0 + k dt) - W0(t0)

    static CommonNoisePath sample(double t0, double T, int steps, double sigma0, std::uint64_t seed);
    static CommonNoisePath zero(double t0, double T, int steps);
    int steps() const { return static_cast<int>(W.size()) - 1; }
    double shift(double t) const;  // sigma0 (W0_t - W0_t0), linear between nodes
};

struct FeedbackControl {
    double t0 = 0.0, T = 1.0;
    int slabs = 1;
    int space = 1;
    double bound = 1.0;
    std::vector<double> values;  // slab-major

    static FeedbackControl zero(double t0, double T, int slabs, int space, double bound);
    double operator()(double t, double x) const;
    void clip();
};

struct FpOptions {
    int substeps = 0;  // per path step; 0 = from the drift CFL dt <= h / max|alpha|
    int save_every = 1;
};

struct FpResult {
    std::vector<double> times;
    std::vector<GridDensity> slices;
};
FpResult solve_fp_common_noise(const FeedbackControl& control, const ProblemData& data, const GridDensity& m0,
                               const CommonNoisePath& path, FpOptions opt = {});

double tv_contraction_probe(const GridDensity& m0, const GridDensity& m0p, const FeedbackControl& control,
                            const ProblemData& data, const CommonNoisePath& path);

struct CommutatorResult {
    double probe = 0.0;         // sup_t ||m^delta_t - rho*m_t||_{H^-3} / (t - t0)
    double scheme_error = 0.0;  // same sup for rho*m_t computed at R vs 2R
};
CommutatorResult commutator_probe(const TrigFunction& alpha0, double delta, const ProblemData& data,
                                  const CommonNoisePath& path, double horizon, const GridDensity& m0);

struct McEstimate {
    double estimate = 0.0;
    double stderr_ = 0.0;
};
// E V(t, xi), xi ~ m^{(x) N}
McEstimate integrated_value_mc(const ValueTensor& V, const Measure& m, double t, int samples, std::uint64_t seed);

struct FeedbackSearch {
    double value = 0.0;
    double stderr_ = 0.0;
    std::vector<double> history;
    FeedbackControl control;
};
double feedback_cost(const FeedbackControl& c, const ProblemData& data, const GridDensity& m0,
                     const std::vector<CommonNoisePath>& paths, double* stderr_out = nullptr);
FeedbackSearch feedback_value_search(const ProblemData& data, const GridDensity& m0, int slabs, int space, int iters,
                                     std::uint64_t seed, int paths = 8);

// Richardson triple: order = log2(|e(R)-e(2R)| / |e(2R)-e(4R)|)
struct SelfConvergence {
    double e1 = 0.0, e2 = 0.0, order = 0.0;
};
SelfConvergence hjb_self_convergence(const ProblemData& data, int N, int resolution);
SelfConvergence fp_self_convergence(const FeedbackControl& control, const ProblemData& data, const GridDensity& m0,
                                    const CommonNoisePath& path);

}  // namespace mfclab
