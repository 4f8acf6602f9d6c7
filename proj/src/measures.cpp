#include "mfclab/measures.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace mfclab {

Domain Domain::torus(int d) {
    if (d < 1) throw Error("domain dimension must be >= 1");
    return {DomainKind::torus, d};
}
Domain Domain::cube(int d) {
    if (d < 1) throw Error("domain dimension must be >= 1");
    return {DomainKind::cube, d};
}
Domain Domain::euclid(int d) {
    if (d < 1) throw Error("domain dimension must be >= 1");
    return {DomainKind::euclid, d};
}

bool Domain::contains(const double* x) const {
    for (int a = 0; a < d; ++a) {
        if (!std::isfinite(x[a])) return false;
        if (kind == DomainKind::torus && (x[a] < 0.0 || x[a] >= 1.0)) return false;
        if (kind == DomainKind::cube && (x[a] < 0.0 || x[a] > 1.0)) return false;
    }
    return true;
}

double wrap01(double x) {
    double r = x - std::floor(x);
    return r >= 1.0 ? 0.0 : r;
}

double torus_gap(double a, double b) {
    double g = std::fabs(wrap01(a - b));
    return std::min(g, 1.0 - g);
}

double Domain::dist2(const double* a, const double* b) const {
    double s = 0.0;
    for (int k = 0; k < d; ++k) {
        double g = kind == DomainKind::torus ? torus_gap(a[k], b[k]) : a[k] - b[k];
        s += g * g;
    }
    return s;
}

void GridDensity::center(std::size_t idx, double* out) const {
    for (std::size_t a = 0; a < resolution.size(); ++a) {
        std::size_t r = static_cast<std::size_t>(resolution[a]);
        out[a] = (static_cast<double>(idx % r) + 0.5) / static_cast<double>(r);
        idx /= r;
    }
}

std::size_t GridDensity::cell_of(const double* x) const {
    std::size_t idx = 0, stride = 1;
    for (std::size_t a = 0; a < resolution.size(); ++a) {
        int r = resolution[a];
        double v = domain.kind == DomainKind::torus ? wrap01(x[a]) : x[a];
        long i = static_cast<long>(std::floor(v * r));
        i = std::clamp<long>(i, 0, r - 1);
        idx += static_cast<std::size_t>(i) * stride;
        stride *= static_cast<std::size_t>(r);
    }
    return idx;
}

const Domain& domain_of(const Measure& m) {
    return std::visit([](const auto& x) -> const Domain& { return x.domain; }, m);
}

EmpiricalMeasure make_empirical(Domain domain, std::vector<double> atoms, std::vector<double> weights) {
    if (weights.empty()) throw Error("empirical measure needs at least one atom");
    if (atoms.size() != weights.size() * static_cast<std::size_t>(domain.d))
        throw Error("atom coordinate count does not match weights and dimension");
    double s = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (!(weights[i] >= 0.0)) throw Error("negative weight at index " + std::to_string(i));
        s += weights[i];
        if (!domain.contains(atoms.data() + i * domain.d))
            throw Error("point " + std::to_string(i) + " outside domain");
    }
    if (std::fabs(s - 1.0) > 1e-12) throw Error("weights do not sum to 1");
    return {domain, std::move(atoms), std::move(weights)};
}

GridDensity make_grid(Domain domain, std::vector<int> resolution, std::vector<double> masses) {
    if (resolution.size() != static_cast<std::size_t>(domain.d))
        throw Error("grid resolution must list one entry per axis");
    std::size_t n = 1;
    for (int r : resolution) {
        if (r < 1) throw Error("grid resolution must be positive");
        n *= static_cast<std::size_t>(r);
    }
    if (masses.size() != n) throw Error("cell count does not match resolution");
    double s = 0.0;
    for (double v : masses) {
        if (!(v >= -1e-14)) throw Error("negative cell mass");
        s += v;
    }
    if (std::fabs(s - 1.0) > 1e-12) throw Error("cell masses do not sum to 1");
    return {domain, std::move(resolution), std::move(masses)};
}

EmpiricalMeasure empirical_from_points(const std::vector<double>& coords, Domain domain) {
    if (coords.empty() || coords.size() % domain.d) throw Error("empty or ragged point list");
    std::size_t n = coords.size() / domain.d;
    for (std::size_t i = 0; i < n; ++i)
        if (!domain.contains(coords.data() + i * domain.d))
            throw Error("point " + std::to_string(i) + " outside domain");
    return {domain, coords, std::vector<double>(n, 1.0 / static_cast<double>(n))};
}

GridDensity uniform_grid(Domain domain, int per_axis) {
    std::vector<int> res(domain.d, per_axis);
    std::size_t n = 1;
    for (int r : res) n *= r;
    return {domain, res, std::vector<double>(n, 1.0 / static_cast<double>(n))};
}

GridDensity point_mass_grid(Domain domain, int per_axis, const double* x) {
    GridDensity g = uniform_grid(domain, per_axis);
    std::fill(g.masses.begin(), g.masses.end(), 0.0);
    g.masses[g.cell_of(x)] = 1.0;
    return g;
}

GridDensity bin_to_grid(const EmpiricalMeasure& m, const std::vector<int>& resolution) {
    if (resolution.size() != static_cast<std::size_t>(m.domain.d)) throw Error("resolution rank mismatch");
    std::size_t n = 1;
    for (int r : resolution) n *= r;
    GridDensity g{m.domain, resolution, std::vector<double>(n, 0.0)};
    for (std::size_t i = 0; i < m.size(); ++i) g.masses[g.cell_of(m.atom(i))] += m.weights[i];
    return g;
}

GridDensity refine_grid(const GridDensity& g, int factor) {
    if (factor < 1) throw Error("refinement factor must be >= 1");
    if (factor == 1) return g;
    int d = g.domain.d;
    std::vector<int> res(g.resolution);
    for (int& r : res) r *= factor;
    std::size_t n = 1;
    for (int r : res) n *= r;
    GridDensity out{g.domain, res, std::vector<double>(n, 0.0)};
    double share = 1.0 / std::pow(static_cast<double>(factor), d);
    for (std::size_t idx = 0; idx < n; ++idx) {
        std::size_t rem = idx, src = 0, stride = 1;
        for (int a = 0; a < d; ++a) {
            std::size_t i = rem % res[a];
            rem /= res[a];
            src += (i / factor) * stride;
            stride *= g.resolution[a];
        }
        out.masses[idx] = g.masses[src] * share;
    }
    return out;
}

// ---- kernel ----

namespace {

double std_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi); }
double std_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// 20-point Gauss-Legendre on [-1,1]
constexpr double kGlX[10] = {0.0765265211334973, 0.2277858511416451, 0.3737060887154195,
                             0.5108670019508271, 0.6360536807265150, 0.7463319064601508,
                             0.8391169718222188, 0.9122344282513259, 0.9639719272779138,
                             0.9931285991850949};
constexpr double kGlW[10] = {0.1527533871307258, 0.1491729864726037, 0.1420961093183820,
                             0.1316886384491766, 0.1181945319615184, 0.1019301198172404,
                             0.0832767415767048, 0.0626720483341091, 0.0406014298003869,
                             0.0176140071391521};

template <class F>
double gauss_legendre(F&& f, double a, double b, int pieces) {
    if (b <= a) return 0.0;
    double s = 0.0, w = (b - a) / pieces;
    for (int p = 0; p < pieces; ++p) {
        double c = a + (p + 0.5) * w, hw = 0.5 * w;
        for (int i = 0; i < 10; ++i) s += hw * kGlW[i] * (f(c - hw * kGlX[i]) + f(c + hw * kGlX[i]));
    }
    return s;
}

double bump_raw(double s) {  // s in units of the support radius
    return std::fabs(s) < 1.0 ? std::exp(-1.0 / (1.0 - s * s)) : 0.0;
}

double bump_norm() {
    static const double z = gauss_legendre(bump_raw, -1.0, 1.0, 64);
    return z;
}

double rho(const MollifierKernel& k, double u) {
    double r = k.radius * k.delta;
    if (std::fabs(u) > r) return 0.0;
    if (k.shape == KernelShape::periodic_gaussian)
        return std_pdf(u / k.delta) / (k.delta * std::erf(k.radius / std::sqrt(2.0)));
    return bump_raw(u / r) / (r * bump_norm());
}

// integral of u*rho over [a,b]
double kernel_moment1(const MollifierKernel& k, double a, double b) {
    double r = k.radius * k.delta;
    a = std::max(a, -r);
    b = std::min(b, r);
    if (b <= a) return 0.0;
    if (k.shape == KernelShape::periodic_gaussian) {
        double z = std::erf(k.radius / std::sqrt(2.0));
        return k.delta * (std_pdf(a / k.delta) - std_pdf(b / k.delta)) / z;
    }
    return gauss_legendre([&](double u) { return u * rho(k, u); }, a, b, 16);
}

void check_kernel(const MollifierKernel& k) {
    if (!(k.delta > 0.0) || !(k.radius > 0.0)) throw Error("mollifier bandwidth must be positive");
}

}  // namespace

double kernel_mass(const MollifierKernel& k, double a, double b) {
    check_kernel(k);
    double r = k.radius * k.delta;
    a = std::max(a, -r);
    b = std::min(b, r);
    if (b <= a) return 0.0;
    if (k.shape == KernelShape::periodic_gaussian) {
        double z = std::erf(k.radius / std::sqrt(2.0));
        return (std_cdf(b / k.delta) - std_cdf(a / k.delta)) / z;
    }
    return gauss_legendre([&](double u) { return rho(k, u); }, a, b, 16);
}

double kernel_first_moment(const MollifierKernel& k) {
    check_kernel(k);
    return 2.0 * kernel_moment1(k, 0.0, k.radius * k.delta);
}

double kernel_symbol(const MollifierKernel& k, int freq) {
    check_kernel(k);
    double r = k.radius * k.delta;
    int pieces = 64 + 8 * std::abs(freq) * static_cast<int>(std::ceil(r));
    return gauss_legendre([&](double u) { return rho(k, u) * std::cos(2.0 * kPi * freq * u); }, -r, r,
                          pieces);
}

std::vector<double> kernel_cell_weights(const MollifierKernel& k, int n) {
    check_kernel(k);
    double h = 1.0 / n, r = k.radius * k.delta;
    long J = static_cast<long>(std::ceil(r / h)) + 1;
    std::vector<double> w(n, 0.0);
    for (long o = -J; o <= J; ++o) {
        double c = o * h;
        // tri((u - c)/h) against rho, split at c
        double left = (1.0 - o) * kernel_mass(k, c - h, c) + kernel_moment1(k, c - h, c) / h;
        double right = (1.0 + o) * kernel_mass(k, c, c + h) - kernel_moment1(k, c, c + h) / h;
        long j = ((o % n) + n) % n;
        w[j] += left + right;
    }
    double s = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& v : w) v /= s;
    return w;
}

namespace {

std::vector<std::pair<int, double>> atom_cell_masses(const MollifierKernel& k, double a, int n) {
    double h = 1.0 / n, r = k.radius * k.delta;
    long lo = static_cast<long>(std::floor((a - r) / h)), hi = static_cast<long>(std::floor((a + r) / h));
    std::vector<double> acc(n, 0.0);
    std::vector<char> touched(n, 0);
    for (long c = lo; c <= hi; ++c) {
        double m = kernel_mass(k, c * h - a, (c + 1) * h - a);
        int j = static_cast<int>(((c % n) + n) % n);
        acc[j] += m;
        touched[j] = 1;
    }
    std::vector<std::pair<int, double>> out;
    for (int j = 0; j < n; ++j)
        if (touched[j]) out.emplace_back(j, acc[j]);
    return out;
}

std::vector<double> circular_convolve_axis(const std::vector<double>& in, const std::vector<int>& res,
                                           int axis, const std::vector<double>& w) {
    int n = res[axis];
    std::size_t stride = 1;
    for (int a = 0; a < axis; ++a) stride *= res[a];
    std::vector<std::pair<int, double>> taps;
    for (int j = 0; j < n; ++j)
        if (w[j] != 0.0) taps.emplace_back(j, w[j]);
    std::vector<double> out(in.size(), 0.0);
    std::size_t block = stride * n;
    for (std::size_t base = 0; base < in.size(); base += block)
        for (std::size_t s = 0; s < stride; ++s)
            for (int i = 0; i < n; ++i) {
                double v = in[base + s + i * stride];
                if (v == 0.0) continue;
                for (auto [j, wj] : taps) out[base + s + ((i + j) % n) * stride] += v * wj;
            }
    return out;
}

}  // namespace

GridDensity mollify(const Measure& m, const MollifierKernel& kernel, int out_resolution) {
    check_kernel(kernel);
    const Domain& dom = domain_of(m);
    if (dom.kind != DomainKind::torus) throw Error("mollify is defined on the torus only");
    if (out_resolution < 1 || 1.0 / out_resolution > kernel.delta / 4.0 + 1e-15)
        throw Error("resolution too coarse relative to delta (cell width must be <= delta/4)");
    int d = dom.d;
    std::vector<int> res(d, out_resolution);
    GridDensity out = uniform_grid(dom, out_resolution);
    if (const auto* e = std::get_if<EmpiricalMeasure>(&m)) {
        std::fill(out.masses.begin(), out.masses.end(), 0.0);
        for (std::size_t i = 0; i < e->size(); ++i) {
            std::vector<std::vector<std::pair<int, double>>> per(d);
            for (int a = 0; a < d; ++a) per[a] = atom_cell_masses(kernel, e->atom(i)[a], out_resolution);
            // tensor product over axes
            std::vector<std::pair<std::size_t, double>> cur{{0, e->weights[i]}};
            std::size_t stride = 1;
            for (int a = 0; a < d; ++a) {
                std::vector<std::pair<std::size_t, double>> nxt;
                nxt.reserve(cur.size() * per[a].size());
                for (auto [idx, w] : cur)
                    for (auto [j, wj] : per[a]) nxt.emplace_back(idx + j * stride, w * wj);
                cur.swap(nxt);
                stride *= out_resolution;
            }
            for (auto [idx, w] : cur) out.masses[idx] += w;
        }
        return out;
    }
    const auto& g = std::get<GridDensity>(m);
    for (int r : g.resolution)
        if (r != out_resolution) throw Error("grid mollification requires out_resolution equal to the input grid");
    auto w = kernel_cell_weights(kernel, out_resolution);
    std::vector<double> cur = g.masses;
    for (int a = 0; a < d; ++a) cur = circular_convolve_axis(cur, res, a, w);
    out.masses = std::move(cur);
    return out;
}

GridDensity mix_with_lebesgue(const GridDensity& m, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("lambda must lie in [0,1]");
    GridDensity out = m;
    double vol = 1.0 / static_cast<double>(m.cells());
    for (double& v : out.masses) v = lambda * vol + (1.0 - lambda) * v;
    return out;
}

GridDensity mix_with_lebesgue(const Measure& m, double lambda, int resolution) {
    if (const auto* g = std::get_if<GridDensity>(&m)) return mix_with_lebesgue(*g, lambda);
    const auto& e = std::get<EmpiricalMeasure>(m);
    return mix_with_lebesgue(bin_to_grid(e, std::vector<int>(e.domain.d, resolution)), lambda);
}

EmpiricalMeasure translate(const EmpiricalMeasure& m, const std::vector<double>& z) {
    int d = m.domain.d;
    if (z.size() != static_cast<std::size_t>(d)) throw Error("shift dimension mismatch");
    for (double v : z)
        if (!std::isfinite(v)) throw Error("shift must be finite");
    EmpiricalMeasure out = m;
    for (std::size_t i = 0; i < m.size(); ++i)
        for (int a = 0; a < d; ++a) {
            double& x = out.atoms[i * d + a];
            x += z[a];
            if (m.domain.kind == DomainKind::torus) x = wrap01(x);
        }
    for (std::size_t i = 0; i < m.size(); ++i)
        if (!out.domain.contains(out.atom(i))) throw Error("translation leaves the cube");
    return out;
}

GridDensity translate(const GridDensity& m, const std::vector<double>& z) {
    int d = m.domain.d;
    if (z.size() != static_cast<std::size_t>(d)) throw Error("shift dimension mismatch");
    for (double v : z)
        if (!std::isfinite(v)) throw Error("shift must be finite");
    std::vector<double> cur = m.masses;
    std::size_t stride = 1;
    for (int a = 0; a < d; ++a) {
        int n = m.resolution[a];
        double s = z[a] * n;
        double fl = std::floor(s);
        double f = s - fl;
        long sh = static_cast<long>(fl);
        if (f > 1.0 - 1e-13) {
            f = 0.0;
            ++sh;
        } else if (f < 1e-13) {
            f = 0.0;
        }
        std::vector<double> nxt(cur.size(), 0.0);
        std::size_t block = stride * n;
        for (std::size_t base = 0; base < cur.size(); base += block)
            for (std::size_t s0 = 0; s0 < stride; ++s0)
                for (int i = 0; i < n; ++i) {
                    double v = cur[base + s0 + i * stride];
                    if (v == 0.0) continue;
                    long t0 = i + sh, t1 = i + sh + 1;
                    if (m.domain.kind == DomainKind::torus) {
                        t0 = ((t0 % n) + n) % n;
                        t1 = ((t1 % n) + n) % n;
                    } else if (t0 < 0 || t0 >= n || (f > 0.0 && (t1 < 0 || t1 >= n))) {
                        throw Error("translation leaves the cube");
                    }
                    nxt[base + s0 + t0 * stride] += (1.0 - f) * v;
                    if (f > 0.0) nxt[base + s0 + t1 * stride] += f * v;
                }
        cur.swap(nxt);
        stride *= n;
    }
    GridDensity out = m;
    out.masses = std::move(cur);
    return out;
}

Measure translate(const Measure& m, const std::vector<double>& z) {
    return std::visit([&](const auto& x) -> Measure { return translate(x, z); }, m);
}

std::vector<double> sample_iid(const Measure& m, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw Error("sample size must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const Domain& dom = domain_of(m);
    int d = dom.d;
    std::vector<double> out(n * d);
    auto pick = [&](const std::vector<double>& cum) {
        double u = U(rng) * cum.back();
        auto it = std::upper_bound(cum.begin(), cum.end(), u);
        std::size_t j = static_cast<std::size_t>(it - cum.begin());
        return std::min(j, cum.size() - 1);
    };
    if (const auto* e = std::get_if<EmpiricalMeasure>(&m)) {
        std::vector<double> cum(e->size());
        std::partial_sum(e->weights.begin(), e->weights.end(), cum.begin());
        for (std::size_t s = 0; s < n; ++s) {
            std::size_t j = e->size() == 1 ? 0 : pick(cum);
            std::copy_n(e->atom(j), d, out.begin() + s * d);
        }
        return out;
    }
    const auto& g = std::get<GridDensity>(m);
    std::vector<double> cum(g.cells());
    std::partial_sum(g.masses.begin(), g.masses.end(), cum.begin());
    std::vector<double> c(d);
    for (std::size_t s = 0; s < n; ++s) {
        std::size_t j = pick(cum);
        g.center(j, c.data());
        for (int a = 0; a < d; ++a) {
            double x = c[a] + (U(rng) - 0.5) * g.width(a);
            out[s * d + a] = dom.kind == DomainKind::torus ? wrap01(x) : std::clamp(x, 0.0, 1.0);
        }
    }
    return out;
}

std::size_t FourierCoeffs::index(const int* k) const {
    std::size_t idx = 0, stride = 1;
    for (int a = 0; a < d; ++a) {
        idx += static_cast<std::size_t>(k[a] + K) * stride;
        stride *= static_cast<std::size_t>(2 * K + 1);
    }
    return idx;
}

FourierCoeffs fourier_coeffs(const Measure& m, int K) {
    const Domain& dom = domain_of(m);
    if (dom.kind != DomainKind::torus) throw Error("Fourier coefficients unsupported on the cube");
    if (K < 1) throw Error("Fourier truncation must be >= 1");
    int d = dom.d, L = 2 * K + 1;
    std::size_t total = 1;
    for (int a = 0; a < d; ++a) total *= L;
    FourierCoeffs out{d, K, std::vector<std::complex<double>>(total, 0.0)};

    auto accumulate = [&](const double* x, double w, const std::vector<double>* sincs) {
        std::vector<std::vector<std::complex<double>>> ph(d, std::vector<std::complex<double>>(L));
        for (int a = 0; a < d; ++a)
            for (int k = -K; k <= K; ++k) {
                auto e = std::polar(1.0, -2.0 * kPi * k * x[a]);
                ph[a][k + K] = sincs ? e * sincs[a][k + K] : e;
            }
        std::vector<std::complex<double>> cur{w};
        for (int a = 0; a < d; ++a) {
            std::vector<std::complex<double>> nxt(cur.size() * L);
            for (int j = 0; j < L; ++j)
                for (std::size_t i = 0; i < cur.size(); ++i) nxt[j * cur.size() + i] = cur[i] * ph[a][j];
            cur.swap(nxt);
        }
        for (std::size_t i = 0; i < total; ++i) out.c[i] += cur[i];
    };

    if (const auto* e = std::get_if<EmpiricalMeasure>(&m)) {
        for (std::size_t i = 0; i < e->size(); ++i) accumulate(e->atom(i), e->weights[i], nullptr);
    } else {
        const auto& g = std::get<GridDensity>(m);
        std::vector<std::vector<double>> sincs(d, std::vector<double>(L, 1.0));
        for (int a = 0; a < d; ++a)
            for (int k = -K; k <= K; ++k)
                if (k != 0) {
                    double t = kPi * k * g.width(a);
                    sincs[a][k + K] = std::sin(t) / t;
                }
        std::vector<double> c(d);
        for (std::size_t j = 0; j < g.cells(); ++j) {
            if (g.masses[j] == 0.0) continue;
            g.center(j, c.data());
            accumulate(c.data(), g.masses[j], sincs.data());
        }
    }
    return out;
}

FourierCoeffs fourier_difference(const Measure& m, const Measure& mp, int K) {
    FourierCoeffs a = fourier_coeffs(m, K);
    FourierCoeffs b = fourier_coeffs(mp, K);
    if (a.d != b.d) throw Error("incompatible domains");
    for (std::size_t i = 0; i < a.c.size(); ++i) a.c[i] -= b.c[i];
    return a;
}

}  // namespace mfclab
