#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mfclab/measures.hpp"
#include "mfclab/quantize.hpp"

namespace mfclab {

enum class CostKind { zero, linear, mean_quadratic, d1_to_reference, custom };

struct TerminalCost {
    CostKind kind = CostKind::zero;
    int dim = 1;
    std::vector<double> b;  // mean_quadratic target
    std::function<double(const double*)> g;
    std::function<void(const double*, double*)> g_grad;
    std::optional<Measure> ref;
    std::function<double(const Measure&)> fn;
    double lipschitz = -1.0;  // d1 constant when known, else < 0

    static TerminalCost zero(int dim = 1);
    static TerminalCost linear(int dim, std::function<double(const double*)> g,
                               std::function<void(const double*, double*)> grad, double lip = -1.0);
    static TerminalCost mean_quadratic(std::vector<double> b);
    static TerminalCost d1_to_reference(Measure ref);
    static TerminalCost custom(int dim, std::function<double(const Measure&)> f, double lip = -1.0);

    double operator()(const Measure& m) const;
    // gradient of y -> G(sum w_i delta_{y_i}) with respect to the atom positions
    std::vector<double> atom_gradient(const EmpiricalMeasure& m) const;
    // first variation at nu, evaluated at the points y (additive constant unspecified)
    std::vector<double> first_variation(const EmpiricalMeasure& nu, const std::vector<double>& ys) const;
};

// Lebesgue measure on [0,1]^d as a one-cell grid
GridDensity lebesgue_cube(int d);
// relabel a measure onto R^d so cube and free atoms can be compared
Measure as_euclid(const Measure& m);

struct HopfLaxSolution {
    double value = 0.0;
    EmpiricalMeasure argmin;
    int iterations = 0;
    double grad_norm = 0.0;
    int restarts = 0;
    std::string method;
};

// x is a flat N*d configuration
HopfLaxSolution vN_deterministic(double t, const std::vector<double>& x, const TerminalCost& G, double T,
                                 std::uint64_t seed = 1);
double vN_objective(double t, const std::vector<double>& x, const std::vector<double>& y, const TerminalCost& G,
                    double T);

double u_upper_candidates(double t, const Measure& m, const TerminalCost& G, double T,
                          const std::vector<Measure>& candidates);

struct RelaxedOptions {
    int max_outer = 60;
    int fw_grid = 512;
    double tol = 1e-6;
};
// seed_y: optional flat N*d starting positions, one piece per source atom
HopfLaxSolution u_relaxed_atomic(double t, const EmpiricalMeasure& m, const TerminalCost& G, double T, int M,
                                 std::uint64_t seed, const std::vector<double>* seed_y = nullptr,
                                 RelaxedOptions opt = {});

double vN_lower_quantization(double t, const std::vector<double>& x, const TerminalCost& G, double T);

std::vector<double> replication_monotonicity(double t, const std::vector<double>& x, const TerminalCost& G,
                                             double T, const std::vector<int>& reps);

struct ConvexityCheck {
    bool pass = true;
    double worst = -1e300;  // max of G(L(E[X|Y])) - G(L(X))
};
ConvexityCheck lconvex_check(const TerminalCost& G, int trials, std::uint64_t seed);

struct MomentCheck {
    bool pass = false;
    double lhs = 0.0, rhs = 0.0;
};
double moment_p(const EmpiricalMeasure& m, double p);
MomentCheck moment_transfer_check(double t, const std::vector<double>& x, const TerminalCost& G, double T, double p,
                                  double lipschitz, int M = 32);

struct GapRow {
    int N = 0;
    double vN = 0.0, u_upper = 0.0, gap = 0.0;
};
struct GapReport {
    std::vector<GapRow> rows;
    RateTable table;
};
GapReport gap_report(double t, const std::vector<std::vector<double>>& xs, const TerminalCost& G, double T,
                     int extra_pieces = 8);

struct QuantBoundCheck {
    double lhs = 0.0, rhs = 0.0, slack = 0.0;
    bool pass = false;
};
// V^N - U_upper <= 4 L_G eps_N(nu_bar) with eps_N from the quantizer upper bound
QuantBoundCheck quantization_gap_check(double t, const std::vector<double>& x, const TerminalCost& G, double T,
                                       double lipschitz, int M = 32);

struct StrictGap {
    double vN = 0.0, u_upper = 0.0, margin = 0.0;
    bool certified = false;
};
// U <= U_upper < V^N - margin at (t, delta_{1/2}) for N = 1, d = 1
StrictGap strict_gap_certificate(double t, double T, double margin);

}  // namespace mfclab
