#include "mfclab/regularize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "mfclab/metrics.hpp"

namespace mfclab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// masses quantised at 1e-10; cells within 1e-3 of a rounding boundary are also tried on the other side
std::vector<long long> mass_key(const GridDensity& m, std::vector<std::size_t>* near = nullptr) {
    std::vector<long long> k(m.cells());
    for (std::size_t i = 0; i < m.cells(); ++i) {
        double x = m.masses[i] * 1e10, fl = std::floor(x);
        k[i] = static_cast<long long>(fl);
        if (near && (x - fl < 1e-3 || x - fl > 1.0 - 1e-3)) near->push_back(i);
    }
    return k;
}

void check_torus1(const GridDensity& m) {
    if (m.domain.kind != DomainKind::torus || m.domain.d != 1) throw Error("lattice members live on T^1");
}

double tv(const GridDensity& a, const GridDensity& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.cells(); ++i) s += std::fabs(a.masses[i] - b.masses[i]);
    return 0.5 * s;
}

}  // namespace

std::size_t MeasureLattice::add(const GridDensity& m) {
    check_torus1(m);
    if (m.resolution[0] != cells) throw Error("lattice member has the wrong cell count");
    if (auto i = find(m)) return *i;
    members.push_back(m);
    index_.emplace(mass_key(m), members.size() - 1);
    return members.size() - 1;
}

std::optional<std::size_t> MeasureLattice::find(const GridDensity& m) const {
    if (m.resolution.size() != 1 || m.resolution[0] != cells) return std::nullopt;
    std::vector<std::size_t> near;
    auto key = mass_key(m, &near);
    if (near.size() > 12) near.resize(12);
    for (std::size_t mask = 0; mask < (std::size_t{1} << near.size()); ++mask) {
        auto k = key;
        for (std::size_t b = 0; b < near.size(); ++b)
            if (mask >> b & 1) {
                double x = m.masses[near[b]] * 1e10;
                k[near[b]] += x - std::floor(x) < 0.5 ? -1 : 1;
            }
        auto it = index_.find(k);
        if (it != index_.end() && tv(m, members[it->second]) < 1e-9) return it->second;
    }
    return std::nullopt;
}

std::size_t MeasureLattice::lebesgue() const {
    auto i = find(uniform_grid(Domain::torus(1), cells));
    if (!i) throw Error("lattice does not contain Lebesgue measure");
    return *i;
}

MeasureLattice simplex_lattice(int cells, int resolution) {
    if (cells < 1 || resolution < 1) throw Error("simplex lattice needs cells, resolution >= 1");
    // C(resolution + cells - 1, cells - 1)
    double count = 1.0;
    for (int j = 1; j < cells; ++j) count = count * (resolution + j) / j;
    if (count > 2e5) throw Error("simplex lattice too large");
    MeasureLattice L;
    L.cells = cells;
    L.resolution = resolution;
    std::vector<int> c(cells, 0);
    c[0] = resolution;
    auto emit = [&] {
        std::vector<double> m(cells);
        for (int i = 0; i < cells; ++i) m[i] = static_cast<double>(c[i]) / resolution;
        L.add(make_grid(Domain::torus(1), {cells}, std::move(m)));
    };
    // enumerate compositions in reverse-lexicographic order
    while (true) {
        emit();
        int last = cells - 1;
        if (c[last] == resolution) break;
        int j = last - 1;
        while (c[j] == 0) --j;
        --c[j];
        int tail = c[last] + 1;
        c[last] = 0;
        c[j + 1] = tail;
    }
    L.base = L.size();
    L.families.push_back({"simplex", 0, L.base});
    std::size_t before = L.size();
    L.add(uniform_grid(Domain::torus(1), cells));
    if (L.size() > before) L.families.push_back({"lebesgue", before, 1});
    return L;
}

MeasureLattice explicit_lattice(const std::vector<GridDensity>& members) {
    if (members.empty()) throw Error("explicit lattice needs members");
    MeasureLattice L;
    check_torus1(members[0]);
    L.cells = members[0].resolution[0];
    for (const auto& m : members) L.add(m);
    L.families.push_back({"explicit", 0, L.size()});
    return L;
}

GridDensity lattice_mollify(const GridDensity& m, const MollifierKernel& k) {
    check_torus1(m);
    int n = m.resolution[0];
    auto w = kernel_cell_weights(k, n);
    std::vector<double> out(n, 0.0);
    for (int j = 0; j < n; ++j) {
        if (m.masses[j] == 0.0) continue;
        for (int o = 0; o < n; ++o) out[(j + o) % n] += m.masses[j] * w[o];
    }
    return make_grid(m.domain, m.resolution, std::move(out));
}

GridDensity lattice_shift(const GridDensity& m, int steps) {
    check_torus1(m);
    int n = m.resolution[0];
    std::vector<double> out(n);
    for (int j = 0; j < n; ++j) out[((j + steps) % n + n) % n] = m.masses[j];
    return make_grid(m.domain, m.resolution, std::move(out));
}

std::size_t close_under_mollification(MeasureLattice& L, const MollifierKernel& k, std::size_t upto) {
    std::size_t first = L.size();
    upto = std::min(upto, L.size());
    std::vector<GridDensity> img(upto);
    parallel_for(upto, [&](std::size_t i) { img[i] = lattice_mollify(L.members[i], k); });
    for (const auto& g : img) L.add(g);
    L.families.push_back({"mollified " + std::to_string(k.delta), first, L.size() - first});
    return L.size() - first;
}

std::size_t close_under_mixing(MeasureLattice& L, double lambda, std::size_t upto) {
    std::size_t first = L.size();
    upto = std::min(upto, L.size());
    for (std::size_t i = 0; i < upto; ++i) L.add(mix_with_lebesgue(L.members[i], lambda));
    L.families.push_back({"mixed " + std::to_string(lambda), first, L.size() - first});
    return L.size() - first;
}

std::vector<double> sobolev_coords(const GridDensity& m, int s) {
    if (s < 1) throw Error("sobolev embedding needs s >= 1");
    int K = sobolev_truncation(s, 1);
    auto q = fourier_coeffs(m, K);
    std::vector<double> out(2 * K);
    for (int k = 1; k <= K; ++k) {
        double w = std::sqrt(2.0) / (1.0 + std::pow(static_cast<double>(k), s));
        auto c = q.at(&k);
        out[2 * (k - 1)] = w * c.real();
        out[2 * (k - 1) + 1] = w * c.imag();
    }
    return out;
}

double SobolevEmbedding::dist2_below(std::size_t i, std::size_t j, double cap) const {
    const double *a = at(i), *b = at(j);
    double s = 0.0;
    for (int k = 0; k < dim; k += 2) {
        s += (a[k] - b[k]) * (a[k] - b[k]) + (a[k + 1] - b[k + 1]) * (a[k + 1] - b[k + 1]);
        if (s >= cap) return s;
    }
    return s;
}

double SobolevEmbedding::dist2(std::size_t i, std::size_t j) const {
    const double *a = at(i), *b = at(j);
    double s = 0.0;
    for (int k = 0; k < dim; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return s;
}

SobolevEmbedding sobolev_embedding(const MeasureLattice& L, int s) {
    SobolevEmbedding e;
    e.s = s;
    e.dim = 2 * sobolev_truncation(s, 1);
    e.coords.resize(L.size() * e.dim);
    parallel_for(L.size(), [&](std::size_t i) {
        auto c = sobolev_coords(L.members[i], s);
        std::copy(c.begin(), c.end(), e.coords.begin() + i * e.dim);
    });
    return e;
}

void RegConfig::validate() const {
    if (!(delta > 0.0)) throw Error("RegConfig: delta must be positive");
    if (!(eps > 0.0)) throw Error("RegConfig: eps must be positive");
    if (lambda < 0.0 || lambda > 0.5) throw Error("RegConfig: lambda must lie in [0, 1/2]");
    if (s_star < 1) throw Error("RegConfig: s_star must be >= 1");
    if (z_resolution < 1) throw Error("RegConfig: z_resolution must be >= 1");
    if (!(c_cfg > 0.0)) throw Error("RegConfig: c_cfg must be positive");
}

bool RegConfig::in_regime() const { return eps < std::pow(delta, 2 * s_star) / c_cfg; }

MollifierKernel RegConfig::mollifier() const {
    return kernel == KernelShape::bump ? MollifierKernel::bump(delta) : MollifierKernel::gaussian(delta);
}

bool ValueField::defined(std::size_t i) const {
    for (std::size_t t = 0; t < times.size(); ++t)
        for (int z = 0; z < z_resolution; ++z)
            if (std::isnan(at(t, z, i))) return false;
    return true;
}

double ValueField::bound() const {
    double b = 0.0;
    for (double v : values)
        if (!std::isnan(v)) b = std::max(b, std::fabs(v));
    return b;
}

ValueField tabulate(std::shared_ptr<const MeasureLattice> L, const std::vector<double>& times, const FieldSource& U,
                    std::string provenance) {
    if (!L || L->size() == 0) throw Error("tabulate needs a nonempty lattice");
    if (times.empty()) throw Error("tabulate needs at least one time");
    ValueField f;
    f.lattice = std::move(L);
    f.times = times;
    f.z_resolution = 1;
    f.provenance = std::move(provenance);
    std::size_t M = f.members();
    f.values.resize(times.size() * M);
    parallel_for(M, [&](std::size_t i) {
        for (std::size_t t = 0; t < times.size(); ++t) {
            double v = U(times[t], f.lattice->members[i]);
            if (!std::isfinite(v)) throw Error("field source returned a non-finite value");
            f.values[t * M + i] = v;
        }
    });
    return f;
}

FieldSource hopflax_source(const TerminalCost& G, double T, int atoms, std::uint64_t seed) {
    return [G, T, atoms, seed](double t, const GridDensity& m) {
        std::vector<double> x, w;
        for (std::size_t i = 0; i < m.cells(); ++i)
            if (m.masses[i] > 0.0) {
                x.push_back((i + 0.5) / m.cells());
                w.push_back(m.masses[i]);
            }
        auto e = make_empirical(Domain::euclid(1), x, w);
        int M = std::max<int>(atoms, static_cast<int>(x.size()));
        return u_relaxed_atomic(t, e, G, T, M, seed).value;
    };
}

FieldSource pde_source(const ValueTensor& V, int samples, std::uint64_t seed) {
    auto vp = std::make_shared<const ValueTensor>(V);
    return [vp, samples, seed](double t, const GridDensity& m) {
        return integrated_value_mc(*vp, m, t, samples, seed).estimate;
    };
}

FieldSource d1_source(const GridDensity& nu0) {
    check_torus1(nu0);
    return [nu0](double, const GridDensity& m) { return d1(m, nu0).value; };
}

namespace {

ValueField like(const ValueField& f, int z_resolution) {
    ValueField g;
    g.lattice = f.lattice;
    g.times = f.times;
    g.z_resolution = z_resolution;
    g.provenance = f.provenance;
    g.projection_error = f.projection_error;
    g.values.assign(f.times.size() * z_resolution * f.members(), kNaN);
    return g;
}

// lattice index standing in for `image` of member i: exact when present, nearest defined member for
// simplex members, otherwise none
struct Lookup {
    const ValueField& src;
    std::vector<std::size_t> defined;

    explicit Lookup(const ValueField& f) : src(f) {
        for (std::size_t j = 0; j < f.members(); ++j)
            if (f.defined(j)) defined.push_back(j);
    }

    std::optional<std::size_t> operator()(const GridDensity& image, std::size_t i, double& err) const {
        const auto& L = *src.lattice;
        if (auto j = L.find(image)) return j;
        if (i >= L.base || defined.empty()) return std::nullopt;
        double best = 1e300;
        std::size_t arg = defined[0];
        for (std::size_t j : defined) {
            double d = tv(image, L.members[j]);
            if (d < best) {
                best = d;
                arg = j;
            }
        }
        err = std::max(err, best);
        return arg;
    }
};

// image_of(i, z) -> (image, source z); z_invariant images are computed once per member
template <class Image>
ValueField remap(const ValueField& f, int z_out, bool z_invariant, Image&& image_of) {
    ValueField g = like(f, z_out);
    Lookup look(f);
    std::size_t M = f.members();
    std::vector<double> err(M, 0.0);
    parallel_for(M, [&](std::size_t i) {
        std::optional<std::size_t> j;
        for (int z = 0; z < z_out; ++z) {
            auto [img, zsrc] = image_of(i, z_invariant ? 0 : z);
            if (!z_invariant || z == 0) j = look(img, i, err[i]);
            if (!j) {
                if (z_invariant) break;
                continue;
            }
            if (z_invariant) zsrc = z;
            for (std::size_t t = 0; t < f.times.size(); ++t) g.values[g.slot(t, z, i)] = f.at(t, zsrc, *j);
        }
    });
    for (double e : err) g.projection_error = std::max(g.projection_error, e);
    return g;
}

}  // namespace

ValueField change_of_variables(const ValueField& U, int z_resolution) {
    if (U.z_resolution != 1) throw Error("change_of_variables expects a field without z");
    if (z_resolution < 1) throw Error("z_resolution must be >= 1");
    const auto& L = *U.lattice;
    return remap(U, z_resolution, false, [&](std::size_t i, int z) {
        double zz = static_cast<double>(z) / z_resolution;
        return std::pair{translate(L.members[i], std::vector<double>{zz}), 0};
    });
}

ValueField mollified_value(const ValueField& f, const MollifierKernel& k) {
    const auto& L = *f.lattice;
    std::vector<GridDensity> img(f.members());
    parallel_for(img.size(), [&](std::size_t i) { img[i] = lattice_mollify(L.members[i], k); });
    return remap(f, f.z_resolution, true, [&](std::size_t i, int z) { return std::pair{img[i], z}; });
}

ValueField shrink_to_lebesgue(const ValueField& f, double lambda) {
    if (lambda < 0.0 || lambda > 0.5) throw Error("shrink_to_lebesgue needs lambda in [0, 1/2]");
    const auto& L = *f.lattice;
    return remap(f, f.z_resolution, true,
                 [&](std::size_t i, int z) { return std::pair{mix_with_lebesgue(L.members[i], lambda), z}; });
}

SupConvolution sup_convolution(const ValueField& f, double eps, int s, const SobolevEmbedding* embedding) {
    if (!(eps > 0.0)) throw Error("sup_convolution needs eps > 0");
    std::size_t M = f.members();
    if (M == 0) throw Error("sup_convolution on an empty lattice");
    std::optional<SobolevEmbedding> own;
    if (!embedding || embedding->s != s || embedding->coords.size() != M * embedding->dim)
        own = sobolev_embedding(*f.lattice, s);
    const SobolevEmbedding& emb = own ? *own : *embedding;
    int Z = f.z_resolution;
    SupConvolution out{like(f, Z), std::vector<std::int64_t>(f.values.size(), -1)};

    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < M; ++j)
        if (f.defined(j)) order.push_back(j);
    if (order.empty()) throw Error("sup_convolution: field is nowhere defined");
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return emb.at(a)[0] < emb.at(b)[0]; });
    std::vector<double> key(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) key[k] = emb.at(order[k])[0];

    for (std::size_t t = 0; t < f.times.size(); ++t) {
        double fmax = -1e300;
        for (std::size_t j : order)
            for (int z = 0; z < Z; ++z) fmax = std::max(fmax, f.at(t, z, j));
        parallel_for(M, [&](std::size_t i) {
            for (int z = 0; z < Z; ++z) {
                double f0 = f.at(t, z, i);
                if (std::isnan(f0)) continue;
                double best = f0;
                std::int64_t arg = static_cast<std::int64_t>(z) * M + i;
                double r2 = 2.0 * eps * (fmax - f0);
                double c0 = emb.at(i)[0];
                for (int zp = 0; zp < Z; ++zp) {
                    double dz = torus_gap(static_cast<double>(z) / Z, static_cast<double>(zp) / Z);
                    double zpen = dz * dz;
                    if (zpen > r2) continue;
                    double rad = std::sqrt(r2 - zpen);
                    auto lo = std::lower_bound(key.begin(), key.end(), c0 - rad) - key.begin();
                    for (std::size_t k = lo; k < key.size() && key[k] <= c0 + rad; ++k) {
                        std::size_t j = order[k];
                        double v = f.at(t, zp, j) - zpen / (2.0 * eps);
                        if (v <= best) continue;
                        double d2 = emb.dist2_below(i, j, 2.0 * eps * (v - best));
                        v -= d2 / (2.0 * eps);
                        if (v > best) {
                            best = v;
                            arg = static_cast<std::int64_t>(zp) * M + j;
                        }
                    }
                }
                out.field.values[out.field.slot(t, z, i)] = best;
                out.argmax[out.field.slot(t, z, i)] = arg;
            }
        });
    }
    return out;
}

// ---- probes ----

std::vector<std::pair<GridDensity, GridDensity>> random_pairs(const MeasureLattice& L, int count, std::uint64_t seed) {
    std::size_t pool = L.base > 1 ? L.base : L.size();
    if (pool < 2) throw Error("random_pairs needs at least two members");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> u(0, pool - 1);
    std::vector<std::pair<GridDensity, GridDensity>> out;
    while (static_cast<int>(out.size()) < count) {
        std::size_t i = u(rng), j = u(rng);
        if (i != j) out.emplace_back(L.members[i], L.members[j]);
    }
    return out;
}

std::vector<std::pair<GridDensity, GridDensity>> mode_pairs(int cells, int max_freq, double amplitude) {
    if (amplitude <= 0.0 || amplitude > 1.0) throw Error("mode_pairs amplitude must lie in (0, 1]");
    if (2 * max_freq > cells) throw Error("mode_pairs frequency above the cell Nyquist limit");
    std::vector<std::pair<GridDensity, GridDensity>> out;
    double h = 1.0 / cells;
    for (int j = 1; j <= max_freq; ++j) {
        std::vector<double> a(cells), b(cells);
        for (int i = 0; i < cells; ++i) {
            // cell average of amplitude * cos(2 pi j x)
            double c = amplitude * (std::sin(2 * kPi * j * (i + 1) * h) - std::sin(2 * kPi * j * i * h)) / (2 * kPi * j);
            a[i] = h + c;
            b[i] = h - c;
        }
        out.emplace_back(make_grid(Domain::torus(1), {cells}, a), make_grid(Domain::torus(1), {cells}, b));
    }
    return out;
}

MollificationProbe mollification_inequality_probe(const std::vector<std::pair<GridDensity, GridDensity>>& pairs,
                                                  const std::vector<double>& deltas, int s, KernelShape shape) {
    if (pairs.empty() || deltas.empty()) throw Error("mollification probe needs pairs and deltas");
    MollificationProbe P;
    P.s = s;
    for (double delta : deltas) {
        auto k = shape == KernelShape::bump ? MollifierKernel::bump(delta) : MollifierKernel::gaussian(delta);
        std::vector<MollificationRow> per(pairs.size());
        parallel_for(pairs.size(), [&](std::size_t p) {
            const auto& [a, b] = pairs[p];
            auto ma = lattice_mollify(a, k), mb = lattice_mollify(b, k);
            auto& r = per[p];
            r.c_self = std::max(d1(a, ma).value, d1(b, mb).value) / delta;
            double n = sobolev_dual_norm(a, b, s);
            if (n < 1e-14) return;
            r.c_d1 = d1(ma, mb).value * std::pow(delta, s - 1) / n;
            r.c_tv = tv(ma, mb) * std::pow(delta, s) / n;
        });
        MollificationRow row;
        row.delta = delta;
        for (const auto& r : per) {
            row.c_d1 = std::max(row.c_d1, r.c_d1);
            row.c_tv = std::max(row.c_tv, r.c_tv);
            row.c_self = std::max(row.c_self, r.c_self);
        }
        P.rows.push_back(row);
    }
    auto stable = [&](auto get) {
        double mean = 0.0;
        for (const auto& r : P.rows) mean += get(r) / P.rows.size();
        if (mean <= 0.0) return false;
        for (const auto& r : P.rows)
            if (std::fabs(get(r) / mean - 1.0) > 0.5) return false;
        return true;
    };
    P.stable = stable([](const auto& r) { return r.c_d1; }) && stable([](const auto& r) { return r.c_tv; }) &&
               stable([](const auto& r) { return r.c_self; });
    return P;
}

SupconvProbe supconv_error_probe(const ValueField& f, const std::vector<double>& eps, int s) {
    if (eps.size() < 2) throw Error("supconv_error_probe needs at least two eps values");
    SupconvProbe P;
    std::size_t M = f.members();
    std::vector<std::size_t> def;
    for (std::size_t j = 0; j < M; ++j)
        if (f.defined(j)) def.push_back(j);
    if (def.empty()) throw Error("supconv_error_probe: field is nowhere defined");
    double lo = 1e300, hi = -1e300;
    for (std::size_t j : def)
        for (std::size_t t = 0; t < f.times.size(); ++t)
            for (int z = 0; z < f.z_resolution; ++z) {
                lo = std::min(lo, f.at(t, z, j));
                hi = std::max(hi, f.at(t, z, j));
            }
    auto emb = sobolev_embedding(*f.lattice, s);
    std::vector<double> dmin(def.size(), 1e300);
    parallel_for(def.size(), [&](std::size_t a) {
        for (std::size_t b = a + 1; b < def.size(); ++b) dmin[a] = std::min(dmin[a], emb.dist2(def[a], def[b]));
    });
    double d2 = *std::min_element(dmin.begin(), dmin.end());
    if (f.z_resolution > 1) d2 = std::min(d2, 1.0 / (f.z_resolution * f.z_resolution));
    P.threshold = hi > lo ? d2 / (2.0 * (hi - lo)) : 1e300;

    bool positive = true;
    for (double e : eps) {
        auto S = sup_convolution(f, e, s, &emb);
        double err = 0.0;
        for (std::size_t k = 0; k < f.values.size(); ++k)
            if (!std::isnan(f.values[k])) err = std::max(err, S.field.values[k] - f.values[k]);
        P.table.rows.push_back({e, err, 0.0});
        positive = positive && err > 0.0;
    }
    if (positive) {
        auto& r = P.table.rows;
        if (r.size() >= 3)
            fit_in_place(P.table);
        else
            P.table.slope = std::log(r[1].value / r[0].value) / std::log(r[1].param / r[0].param);
        P.pass = std::fabs(P.table.slope - 1.0) <= 0.2;
    }
    return P;
}

namespace {

template <class Visit>
void sample_pairs(std::size_t pool, int count, std::uint64_t seed, Visit&& visit) {
    if (pool < 2) return;
    if (pool * (pool - 1) / 2 <= static_cast<std::size_t>(count)) {
        for (std::size_t i = 0; i < pool; ++i)
            for (std::size_t j = i + 1; j < pool; ++j) visit(i, j);
        return;
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> u(0, pool - 1);
    for (int k = 0; k < count; ++k) {
        std::size_t i = u(rng), j = u(rng);
        if (i != j) visit(i, j);
    }
}

double member_dist(const ValueField& f, const SobolevEmbedding* emb, std::size_t i, std::size_t j) {
    const auto& L = *f.lattice;
    return emb ? std::sqrt(emb->dist2(i, j)) : tv(L.members[i], L.members[j]);
}

}  // namespace

SemiconcavityReport semiconcavity_probe(const ValueField& f, LatticeMetric metric, int s, int trials,
                                        std::uint64_t seed) {
    const auto& L = *f.lattice;
    std::optional<SobolevEmbedding> emb;
    if (metric == LatticeMetric::sobolev) emb = sobolev_embedding(L, s);
    std::vector<std::size_t> pool;
    for (std::size_t j = 0; j < L.size(); ++j)
        if (f.defined(j)) pool.push_back(j);
    SemiconcavityReport R;
    R.worst = -1e300;
    // midpoints exist for a small fraction of pairs, so draw generously
    sample_pairs(pool.size(), trials * 64, seed, [&](std::size_t a, std::size_t b) {
        if (R.triples >= trials && pool.size() * (pool.size() - 1) / 2 > static_cast<std::size_t>(trials) * 64) return;
        std::size_t i = pool[a], j = pool[b];
        std::vector<double> mid(L.cells);
        for (int c = 0; c < L.cells; ++c) mid[c] = 0.5 * (L.members[i].masses[c] + L.members[j].masses[c]);
        auto k = L.find(make_grid(Domain::torus(1), {L.cells}, mid));
        if (!k || !f.defined(*k)) return;
        double d = member_dist(f, emb ? &*emb : nullptr, i, j);
        if (d <= 0.0) return;
        ++R.triples;
        for (std::size_t t = 0; t < f.times.size(); ++t)
            for (int z = 0; z < f.z_resolution; ++z) {
                double num = 0.5 * f.at(t, z, i) + 0.5 * f.at(t, z, j) - f.at(t, z, *k);
                R.worst = std::max(R.worst, 8.0 * num / (d * d));
            }
    });
    if (R.triples == 0) throw Error("semiconcavity_probe found no lattice midpoints");
    return R;
}

double lattice_lipschitz(const ValueField& f, LatticeMetric metric, int s, int pairs, std::uint64_t seed) {
    const auto& L = *f.lattice;
    std::optional<SobolevEmbedding> emb;
    if (metric == LatticeMetric::sobolev) emb = sobolev_embedding(L, s);
    std::vector<std::size_t> pool;
    for (std::size_t j = 0; j < L.size(); ++j)
        if (f.defined(j)) pool.push_back(j);
    double lip = 0.0;
    sample_pairs(pool.size(), pairs, seed, [&](std::size_t a, std::size_t b) {
        std::size_t i = pool[a], j = pool[b];
        double d = member_dist(f, emb ? &*emb : nullptr, i, j);
        if (d <= 1e-14) return;
        for (std::size_t t = 0; t < f.times.size(); ++t)
            for (int z = 0; z < f.z_resolution; ++z) lip = std::max(lip, std::fabs(f.at(t, z, i) - f.at(t, z, j)) / d);
    });
    return lip;
}

ChainReport chain_budget_probe(const MeasureLattice& base, const FieldSource& U, const std::vector<double>& deltas,
                               const std::vector<double>& thetas, const std::vector<double>& lambdas,
                               const RegConfig& cfg) {
    cfg.validate();
    if (deltas.empty() || thetas.empty() || lambdas.empty()) throw Error("chain probe needs a nonempty grid");
    auto L = std::make_shared<MeasureLattice>(base);
    std::size_t core = L->size();
    for (double d : deltas) {
        RegConfig c = cfg;
        c.delta = d;
        close_under_mollification(*L, c.mollifier(), core);
    }
    std::size_t with_moll = L->size();
    for (double l : lambdas) close_under_mixing(*L, l, with_moll);

    auto U0 = tabulate(L, {0.0}, U, "chain source");
    auto emb = sobolev_embedding(*L, cfg.s_star);
    auto Uh = change_of_variables(U0, cfg.z_resolution);
    std::size_t targets = base.base > 0 ? base.base : core;
    int s = cfg.s_star;
    ChainReport R;
    R.projection_error = Uh.projection_error;
    for (double d : deltas) {
        RegConfig c = cfg;
        c.delta = d;
        auto Ud = mollified_value(Uh, c.mollifier());
        R.projection_error = std::max(R.projection_error, Ud.projection_error);
        for (double th : thetas) {
            double e = th * std::pow(d, 2 * s) / cfg.c_cfg;
            auto S = sup_convolution(Ud, e, s, &emb);
            for (double l : lambdas) {
                auto Sh = shrink_to_lebesgue(S.field, l);
                R.projection_error = std::max(R.projection_error, Sh.projection_error);
                ChainRow row{d, e, l, 0.0, d + l + e * std::pow(d, -2.0 * (s - 1)), false};
                c.eps = e;
                c.lambda = l;
                row.in_regime = c.in_regime();
                for (std::size_t i = 0; i < targets; ++i)
                    for (int z = 0; z < cfg.z_resolution; ++z) {
                        double v = Sh.at(0, z, i);
                        if (std::isnan(v)) throw Error("chain probe: shrunk field undefined on a lattice member");
                        row.error = std::max(row.error, std::fabs(v - Uh.at(0, z, i)));
                    }
                R.rows.push_back(row);
            }
        }
    }
    double num = 0.0, den = 0.0, ee = 0.0;
    for (const auto& r : R.rows) {
        num += r.error * r.predictor;
        den += r.predictor * r.predictor;
        ee += r.error * r.error;
        R.bound_constant = std::max(R.bound_constant, r.error / r.predictor);
    }
    R.fitted = num / den;
    double res = 0.0;
    for (const auto& r : R.rows) res += std::pow(r.error - R.fitted * r.predictor, 2);
    R.residual = ee > 0.0 ? std::sqrt(res / ee) : 0.0;
    R.pass = R.residual < 0.25;
    return R;
}

}  // namespace mfclab
