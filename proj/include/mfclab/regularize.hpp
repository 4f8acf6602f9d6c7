#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mfclab/hopflax.hpp"
#include "mfclab/measures.hpp"
#include "mfclab/pde.hpp"
#include "mfclab/quantize.hpp"

namespace mfclab {

// finite stand-in for P(T^1): densities on `cells` equal cells
struct MeasureLattice {
    struct Family {
        std::string label;
        std::size_t first = 0, count = 0;
    };

    int cells = 8;
    int resolution = 0;  // simplex grid step 1/resolution; 0 = no grid part
    std::vector<GridDensity> members;
    std::size_t base = 0;  // members [0, base) form the simplex grid
    std::vector<Family> families;

    std::size_t size() const { return members.size(); }
    // index of an existing member with the same masses (1e-12), or append
    std::size_t add(const GridDensity& m);
    std::optional<std::size_t> find(const GridDensity& m) const;
    std::size_t lebesgue() const;

   private:
    std::map<std::vector<long long>, std::size_t> index_;
};

MeasureLattice simplex_lattice(int cells, int resolution);
// empty lattice with explicit members (any common cell count)
MeasureLattice explicit_lattice(const std::vector<GridDensity>& members);

// cell-exact m * rho on the same cells (circulant cell weights)
GridDensity lattice_mollify(const GridDensity& m, const MollifierKernel& k);
// cyclic shift by `steps` cells
GridDensity lattice_shift(const GridDensity& m, int steps);

// adds images of the current members [0, upto) and returns the new family
std::size_t close_under_mollification(MeasureLattice& L, const MollifierKernel& k, std::size_t upto);
std::size_t close_under_mixing(MeasureLattice& L, double lambda, std::size_t upto);

// Fourier coordinates with |phi(m) - phi(m')| = ||m - m'||_{H^-s}
struct SobolevEmbedding {
    int s = 3;
    int dim = 0;
    std::vector<double> coords;  // member-major
    const double* at(std::size_t i) const { return coords.data() + i * dim; }
    double dist2(std::size_t i, std::size_t j) const;
    // stops summing once the partial sum reaches cap
    double dist2_below(std::size_t i, std::size_t j, double cap) const;
};
SobolevEmbedding sobolev_embedding(const MeasureLattice& L, int s);
std::vector<double> sobolev_coords(const GridDensity& m, int s);

struct RegConfig {
    double delta = 0.1;
    double eps = 1e-8;
    double lambda = 0.0;
    int s_star = 3;
    int z_resolution = 8;
    double c_cfg = 10.0;  // regime eps < delta^(2 s*) / c_cfg
    KernelShape kernel = KernelShape::periodic_gaussian;

    void validate() const;
    bool in_regime() const;
    MollifierKernel mollifier() const;
};

// values over (time, z-grid, lattice member); NaN marks entries a stage could not define
struct ValueField {
    std::shared_ptr<const MeasureLattice> lattice;
    std::vector<double> times{0.0};
    int z_resolution = 1;  // z in {j / z_resolution}
    std::vector<double> values;
    std::string provenance;
    double projection_error = 0.0;  // largest TV distance to a projected lattice image

    std::size_t members() const { return lattice->size(); }
    std::size_t slot(std::size_t t, int z, std::size_t i) const { return (t * z_resolution + z) * members() + i; }
    double at(std::size_t t, int z, std::size_t i) const { return values[slot(t, z, i)]; }
    bool defined(std::size_t i) const;  // at every (t, z)
    double bound() const;                // max |value| over defined entries
};

using FieldSource = std::function<double(double t, const GridDensity& m)>;

ValueField tabulate(std::shared_ptr<const MeasureLattice> L, const std::vector<double>& times, const FieldSource& U,
                    std::string provenance);

// U(t, m) from the zero-noise Hopf-Lax upper bound at the cell centres
FieldSource hopflax_source(const TerminalCost& G, double T, int atoms, std::uint64_t seed);
// E V(t, xi), xi ~ m^{(x) N}
FieldSource pde_source(const ValueTensor& V, int samples, std::uint64_t seed);
FieldSource d1_source(const GridDensity& nu0);

ValueField change_of_variables(const ValueField& U, int z_resolution);
ValueField mollified_value(const ValueField& f, const MollifierKernel& k);

struct SupConvolution {
    ValueField field;
    std::vector<std::int64_t> argmax;  // z' * members + m', -1 where undefined
};
SupConvolution sup_convolution(const ValueField& f, double eps, int s, const SobolevEmbedding* embedding = nullptr);

ValueField shrink_to_lebesgue(const ValueField& f, double lambda);

// ---- probes ----

struct MollificationRow {
    double delta = 0.0;
    double c_d1 = 0.0;    // d1(m*rho, m'*rho) delta^(s-1) / ||m - m'||_{-s}
    double c_tv = 0.0;    // TV(m*rho, m'*rho) delta^s / ||m - m'||_{-s}
    double c_self = 0.0;  // d1(m, m*rho) / delta
};
struct MollificationProbe {
    std::vector<MollificationRow> rows;
    int s = 3;
    bool stable = false;  // every constant within 50% of its mean over delta
};
std::vector<std::pair<GridDensity, GridDensity>> random_pairs(const MeasureLattice& L, int count, std::uint64_t seed);
// Leb +- amplitude cos(2 pi j x), j = 1..max_freq, cell-averaged
std::vector<std::pair<GridDensity, GridDensity>> mode_pairs(int cells, int max_freq, double amplitude = 0.5);
MollificationProbe mollification_inequality_probe(const std::vector<std::pair<GridDensity, GridDensity>>& pairs,
                                                  const std::vector<double>& deltas, int s,
                                                  KernelShape shape = KernelShape::periodic_gaussian);

struct SupconvProbe {
    RateTable table;         // param eps, value sup |U^{d,e} - U^d|
    double threshold = 0.0;  // below this eps the lattice sup-convolution is the identity
    bool pass = false;       // fitted eps exponent 1.0 +- 0.2
};
SupconvProbe supconv_error_probe(const ValueField& f, const std::vector<double>& eps, int s);

enum class LatticeMetric { tv, sobolev };

struct SemiconcavityReport {
    double worst = 0.0;  // max 8 [U(m)/2 + U(m')/2 - U(mid)] / dist^2
    int triples = 0;
};
SemiconcavityReport semiconcavity_probe(const ValueField& f, LatticeMetric metric, int s, int trials,
                                        std::uint64_t seed);

double lattice_lipschitz(const ValueField& f, LatticeMetric metric, int s, int pairs, std::uint64_t seed);

struct ChainRow {
    double delta = 0.0, eps = 0.0, lambda = 0.0;
    double error = 0.0;      // sup |U^{d,e,l} - U| over base members and z
    double predictor = 0.0;  // delta + lambda + eps delta^(-2(s*-1))
    bool in_regime = false;
};
struct ChainReport {
    std::vector<ChainRow> rows;
    double fitted = 0.0;    // least squares through the origin
    double residual = 0.0;  // |error - fitted predictor|_2 / |error|_2
    double bound_constant = 0.0;  // max error / predictor
    double projection_error = 0.0;
    bool pass = false;  // residual < 0.25
};
// eps is thetas[k] * delta^(2 s*) / c_cfg
ChainReport chain_budget_probe(const MeasureLattice& base, const FieldSource& U, const std::vector<double>& deltas,
                               const std::vector<double>& thetas, const std::vector<double>& lambdas,
                               const RegConfig& cfg);

}  // namespace mfclab
