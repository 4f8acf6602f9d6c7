#include "mfclab/hopflax.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "mfclab/metrics.hpp"
#include "mfclab/transport.hpp"

namespace mfclab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double tau_of(double t, double T) {
    if (!(t < T)) throw Error("Hopf-Lax evaluation needs t < T");
    return T - t;
}

EmpiricalMeasure euclid_atoms(int d, std::vector<double> y, std::vector<double> w) {
    return EmpiricalMeasure{Domain::euclid(d), std::move(y), std::move(w)};
}

EmpiricalMeasure uniform_atoms(int d, const std::vector<double>& y) {
    std::size_t n = y.size() / d;
    return euclid_atoms(d, y, std::vector<double>(n, 1.0 / n));
}

bool exact_1d_d1(const TerminalCost& G) {
    return G.kind == CostKind::d1_to_reference && G.dim == 1;
}

std::vector<double> mean_of(const Measure& m) {
    int d = domain_of(m).d;
    std::vector<double> mu(d, 0.0), c(d);
    if (const auto* e = std::get_if<EmpiricalMeasure>(&m)) {
        for (std::size_t i = 0; i < e->size(); ++i)
            for (int a = 0; a < d; ++a) mu[a] += e->weights[i] * e->atom(i)[a];
    } else {
        const auto& g = std::get<GridDensity>(m);
        for (std::size_t j = 0; j < g.cells(); ++j) {
            g.center(j, c.data());
            for (int a = 0; a < d; ++a) mu[a] += g.masses[j] * c[a];
        }
    }
    return mu;
}

// directional derivative of nu -> d1(nu, ref) toward delta_y, for nu on the line
struct D1Variation {
    struct Seg {
        double lo, hi, s;
    };
    std::vector<LinePiece> a, b;
    std::vector<Seg> segs;
    std::vector<double> below, above;  // prefix of below-contributions, suffix of above-contributions

    D1Variation(std::vector<LinePiece> nu, std::vector<LinePiece> ref) : a(std::move(nu)), b(std::move(ref)) {
        std::vector<double> xs;
        for (const auto* p : {&a, &b})
            for (const auto& q : *p) {
                xs.push_back(q.a);
                xs.push_back(q.b);
            }
        std::sort(xs.begin(), xs.end());
        xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
        auto sg = [](double v) { return v > 1e-14 ? 1.0 : (v < -1e-14 ? -1.0 : 0.0); };
        for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
            double lo = xs[k], hi = xs[k + 1], e = 0.25 * (hi - lo) * 1e-6;
            double d0 = diff(lo + e), d1 = diff(hi - e);
            if (sg(d0) != sg(d1) && d0 != d1) {
                double z = std::clamp(lo + (hi - lo) * d0 / (d0 - d1), lo, hi);
                segs.push_back({lo, z, sg(d0)});
                segs.push_back({z, hi, sg(d1)});
            } else {
                segs.push_back({lo, hi, sg(diff(0.5 * (lo + hi)))});
            }
        }
        below.assign(segs.size() + 1, 0.0);
        above.assign(segs.size() + 1, 0.0);
        for (std::size_t k = 0; k < segs.size(); ++k) below[k + 1] = below[k] + part(segs[k], segs[k].lo, segs[k].hi, false);
        for (std::size_t k = segs.size(); k-- > 0;) above[k] = above[k + 1] + part(segs[k], segs[k].lo, segs[k].hi, true);
    }

    double diff(double x) const { return line_cdf(a, x) - line_cdf(b, x); }

    // integral over [lo,hi] of s(1-F) (above y) or -sF (below y); |.| where s = 0
    double part(const Seg& g, double lo, double hi, bool is_above) const {
        if (hi <= lo) return 0.0;
        double F = line_cdf(a, 0.5 * (lo + hi));
        double v = is_above ? (g.s == 0.0 ? 1.0 - F : g.s * (1.0 - F)) : (g.s == 0.0 ? F : -g.s * F);
        return v * (hi - lo);
    }

    double operator()(double y) const {
        if (segs.empty()) return 0.0;
        double lo = segs.front().lo, hi = segs.back().hi;
        if (y <= lo) return (lo - y) + above[0];
        if (y >= hi) return below[segs.size()] + (y - hi);
        std::size_t k = std::upper_bound(segs.begin(), segs.end(), y, [](double v, const Seg& g) { return v < g.hi; }) -
                        segs.begin();
        if (k >= segs.size()) k = segs.size() - 1;
        return below[k] + part(segs[k], segs[k].lo, y, false) + part(segs[k], y, segs[k].hi, true) + above[k + 1];
    }
};

template <class F>
double golden_min(F&& f, double a, double b, double& xbest, int iters = 60) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - g * (b - a), x2 = a + g * (b - a), f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < iters && b - a > 1e-15; ++it) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    xbest = f1 < f2 ? x1 : x2;
    return std::min(f1, f2);
}

}  // namespace

GridDensity lebesgue_cube(int d) { return uniform_grid(Domain::cube(d), 1); }

Measure as_euclid(const Measure& m) {
    Measure out = m;
    std::visit([](auto& v) { v.domain = Domain::euclid(v.domain.d); }, out);
    return out;
}

TerminalCost TerminalCost::zero(int dim) {
    TerminalCost c;
    c.dim = dim;
    c.lipschitz = 0.0;
    return c;
}

TerminalCost TerminalCost::linear(int dim, std::function<double(const double*)> g,
                                  std::function<void(const double*, double*)> grad, double lip) {
    TerminalCost c;
    c.kind = CostKind::linear;
    c.dim = dim;
    c.g = std::move(g);
    c.g_grad = std::move(grad);
    c.lipschitz = lip;
    return c;
}

TerminalCost TerminalCost::mean_quadratic(std::vector<double> b) {
    TerminalCost c;
    c.kind = CostKind::mean_quadratic;
    c.dim = static_cast<int>(b.size());
    c.b = std::move(b);
    return c;
}

TerminalCost TerminalCost::d1_to_reference(Measure ref) {
    TerminalCost c;
    c.kind = CostKind::d1_to_reference;
    c.dim = domain_of(ref).d;
    c.ref = as_euclid(ref);
    c.lipschitz = 1.0;
    return c;
}

TerminalCost TerminalCost::custom(int dim, std::function<double(const Measure&)> f, double lip) {
    TerminalCost c;
    c.kind = CostKind::custom;
    c.dim = dim;
    c.fn = std::move(f);
    c.lipschitz = lip;
    return c;
}

double TerminalCost::operator()(const Measure& m) const {
    if (domain_of(m).d != dim) throw Error("terminal cost dimension mismatch");
    switch (kind) {
        case CostKind::zero:
            return 0.0;
        case CostKind::linear: {
            double s = 0.0;
            if (const auto* e = std::get_if<EmpiricalMeasure>(&m)) {
                for (std::size_t i = 0; i < e->size(); ++i) s += e->weights[i] * g(e->atom(i));
            } else {
                const auto& gr = std::get<GridDensity>(m);
                std::vector<double> c(dim);
                for (std::size_t j = 0; j < gr.cells(); ++j) {
                    gr.center(j, c.data());
                    s += gr.masses[j] * g(c.data());
                }
            }
            return s;
        }
        case CostKind::mean_quadratic: {
            auto mu = mean_of(m);
            double s = 0.0;
            for (int a = 0; a < dim; ++a) s += (mu[a] - b[a]) * (mu[a] - b[a]);
            return s;
        }
        case CostKind::d1_to_reference:
            if (dim == 1) return line_transport_cost(line_pieces(as_euclid(m)), line_pieces(*ref), 1);
            return wasserstein(as_euclid(m), *ref, 1).value;
        case CostKind::custom:
            return fn(m);
    }
    return 0.0;
}

std::vector<double> TerminalCost::atom_gradient(const EmpiricalMeasure& m) const {
    std::size_t n = m.size();
    std::vector<double> gr(n * dim, 0.0);
    switch (kind) {
        case CostKind::zero:
            return gr;
        case CostKind::linear: {
            std::vector<double> tmp(dim);
            for (std::size_t i = 0; i < n; ++i) {
                g_grad(m.atom(i), tmp.data());
                for (int a = 0; a < dim; ++a) gr[i * dim + a] = m.weights[i] * tmp[a];
            }
            return gr;
        }
        case CostKind::mean_quadratic: {
            auto mu = mean_of(m);
            for (std::size_t i = 0; i < n; ++i)
                for (int a = 0; a < dim; ++a) gr[i * dim + a] = 2.0 * m.weights[i] * (mu[a] - b[a]);
            return gr;
        }
        default:
            break;
    }
    // central differences
    EmpiricalMeasure p = m;
    const double h = 1e-7;
    for (std::size_t k = 0; k < n * dim; ++k) {
        double keep = p.atoms[k];
        p.atoms[k] = keep + h;
        double fp = (*this)(p);
        p.atoms[k] = keep - h;
        double fm = (*this)(p);
        p.atoms[k] = keep;
        gr[k] = (fp - fm) / (2.0 * h);
    }
    return gr;
}

std::vector<double> TerminalCost::first_variation(const EmpiricalMeasure& nu, const std::vector<double>& ys) const {
    std::size_t n = ys.size() / dim;
    std::vector<double> out(n, 0.0);
    switch (kind) {
        case CostKind::zero:
            return out;
        case CostKind::linear:
            for (std::size_t k = 0; k < n; ++k) out[k] = g(ys.data() + k * dim);
            return out;
        case CostKind::mean_quadratic: {
            auto mu = mean_of(nu);
            for (std::size_t k = 0; k < n; ++k)
                for (int a = 0; a < dim; ++a) out[k] += 2.0 * (mu[a] - b[a]) * ys[k * dim + a];
            return out;
        }
        case CostKind::d1_to_reference:
            if (dim == 1) {
                D1Variation si(line_pieces(as_euclid(nu)), line_pieces(*ref));
                for (std::size_t k = 0; k < n; ++k) out[k] = si(ys[k]);
                return out;
            }
            break;
        default:
            break;
    }
    const double eps = 1e-7;
    double base = (*this)(nu);
    for (std::size_t k = 0; k < n; ++k) {
        EmpiricalMeasure p = nu;
        for (double& w : p.weights) w *= 1.0 - eps;
        p.atoms.insert(p.atoms.end(), ys.begin() + k * dim, ys.begin() + (k + 1) * dim);
        p.weights.push_back(eps);
        out[k] = ((*this)(p) - base) / eps;
    }
    return out;
}

double vN_objective(double t, const std::vector<double>& x, const std::vector<double>& y, const TerminalCost& G,
                    double T) {
    double tau = tau_of(t, T);
    std::size_t N = x.size() / G.dim;
    double q = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) q += (x[k] - y[k]) * (x[k] - y[k]);
    return G(uniform_atoms(G.dim, y)) + q / (2.0 * tau * N);
}

namespace {

HopfLaxSolution vN_exact_1d(double t, const std::vector<double>& x, const TerminalCost& G, double T) {
    double tau = tau_of(t, T);
    int N = static_cast<int>(x.size());
    auto ref = line_pieces(*G.ref);
    std::vector<int> order(N);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return x[a] < x[b]; });
    std::vector<double> y(N);
    const double c = 1.0 / (tau * N);
    for (int r = 0; r < N; ++r) {
        int i = order[r];
        double lo = x[i] - tau - 1e-9, hi = x[i] + tau + 1e-9;
        auto D = [&](double v) {
            return 2.0 * std::clamp(line_cdf(ref, v) - double(r) / N, 0.0, 1.0 / N) - 1.0 / N + c * (v - x[i]);
        };
        for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
            double mid = 0.5 * (lo + hi);
            (D(mid) > 0.0 ? hi : lo) = mid;
        }
        y[i] = 0.5 * (lo + hi);
    }
    HopfLaxSolution s;
    s.value = vN_objective(t, x, y, G, T);
    s.argmin = uniform_atoms(1, y);
    s.method = "sorted_separable_exact";
    return s;
}

struct DescentResult {
    std::vector<double> y;
    double value;
    double grad_norm;
    int iters;
};

DescentResult descend(double t, const std::vector<double>& x, std::vector<double> y, const TerminalCost& G, double T) {
    double tau = tau_of(t, T);
    std::size_t N = x.size() / G.dim;
    auto f = [&](const std::vector<double>& v) { return vN_objective(t, x, v, G, T); };
    double fy = f(y), step = tau * N, gn = 0.0;
    int it = 0;
    for (; it < 20000; ++it) {
        auto gr = G.atom_gradient(uniform_atoms(G.dim, y));
        gn = 0.0;
        for (std::size_t k = 0; k < y.size(); ++k) {
            gr[k] += (y[k] - x[k]) / (tau * N);
            gn += gr[k] * gr[k];
        }
        gn = std::sqrt(gn);
        if (gn < 1e-13) break;
        bool moved = false;
        for (int bt = 0; bt < 60; ++bt) {
            std::vector<double> cand(y);
            for (std::size_t k = 0; k < y.size(); ++k) cand[k] -= step * gr[k];
            double fc = f(cand);
            if (fc <= fy - 1e-4 * step * gn * gn) {
                y = std::move(cand);
                fy = fc;
                moved = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if (!moved) break;
    }
    return {y, fy, gn, it};
}

}  // namespace

HopfLaxSolution vN_deterministic(double t, const std::vector<double>& x, const TerminalCost& G, double T,
                                 std::uint64_t seed) {
    tau_of(t, T);
    if (x.empty() || x.size() % G.dim) throw Error("configuration size must be a positive multiple of d");
    if (exact_1d_d1(G)) return vN_exact_1d(t, x, G, T);
    int d = G.dim;
    int N = static_cast<int>(x.size() / d);
    std::vector<std::vector<double>> starts{x, grid_center_config(N, d).atoms};
    for (int r = 0; r < 6; ++r) {
        std::mt19937_64 rng(derive_seed(seed, "vN/" + std::to_string(r)));
        std::normal_distribution<double> nd(0.0, 0.1);
        std::vector<double> y(x);
        for (double& v : y) v += nd(rng);
        starts.push_back(y);
    }
    std::vector<DescentResult> res(starts.size());
    parallel_for(starts.size(), [&](std::size_t r) { res[r] = descend(t, x, starts[r], G, T); });
    std::size_t best = 0;
    for (std::size_t r = 1; r < res.size(); ++r)
        if (res[r].value < res[best].value || (res[r].value == res[best].value && res[r].y < res[best].y)) best = r;
    HopfLaxSolution s;
    s.value = res[best].value;
    s.argmin = uniform_atoms(d, res[best].y);
    s.iterations = res[best].iters;
    s.grad_norm = res[best].grad_norm;
    s.restarts = static_cast<int>(starts.size());
    s.method = "gradient_restarts";
    return s;
}

double u_upper_candidates(double t, const Measure& m, const TerminalCost& G, double T,
                          const std::vector<Measure>& candidates) {
    double tau = tau_of(t, T);
    if (candidates.empty()) throw Error("u_upper_candidates needs at least one candidate");
    double best = kInf;
    Measure me = as_euclid(m);
    for (const auto& nu : candidates) {
        Measure ne = as_euclid(nu);
        double w = wasserstein(me, ne, 2).value;
        best = std::min(best, G(ne) + w * w / (2.0 * tau));
    }
    return best;
}

namespace {

struct Piece {
    int src;
    std::vector<double> y;
    double f;
};

struct Relaxed {
    const EmpiricalMeasure& m;
    const TerminalCost& G;
    double tau;
    int d;
    std::vector<Piece> pieces;

    EmpiricalMeasure nu() const {
        std::vector<double> y, w;
        for (const auto& p : pieces) {
            double mass = m.weights[p.src] * p.f;
            if (mass <= 0.0) continue;
            y.insert(y.end(), p.y.begin(), p.y.end());
            w.push_back(mass);
        }
        double s = std::accumulate(w.begin(), w.end(), 0.0);
        for (double& v : w) v /= s;
        return euclid_atoms(d, y, w);
    }

    double coupling() const {
        double c = 0.0;
        for (const auto& p : pieces) {
            double q = 0.0;
            for (int a = 0; a < d; ++a) {
                double diff = p.y[a] - m.atom(p.src)[a];
                q += diff * diff;
            }
            c += m.weights[p.src] * p.f * q;
        }
        return c / (2.0 * tau);
    }

    double J() const { return G(nu()) + coupling(); }
};

}  // namespace

HopfLaxSolution u_relaxed_atomic(double t, const EmpiricalMeasure& m0, const TerminalCost& G, double T, int M,
                                 std::uint64_t seed, const std::vector<double>* seed_y, RelaxedOptions opt) {
    double tau = tau_of(t, T);
    if (M < 1) throw Error("u_relaxed_atomic needs M >= 1");
    EmpiricalMeasure m = m0;
    m.domain = Domain::euclid(m.domain.d);
    int d = m.domain.d;
    if (d != G.dim) throw Error("terminal cost dimension mismatch");
    if (static_cast<std::size_t>(M) < m.size()) throw Error("M must be at least the number of source atoms");
    Relaxed R{m, G, tau, d, {}};
    for (std::size_t i = 0; i < m.size(); ++i) {
        std::vector<double> y(m.atom(i), m.atom(i) + d);
        if (seed_y) y.assign(seed_y->begin() + i * d, seed_y->begin() + (i + 1) * d);
        R.pieces.push_back({static_cast<int>(i), y, 1.0});
    }
    double J = R.J();
    std::mt19937_64 rng(derive_seed(seed, "relaxed"));
    std::vector<double> radius(M, tau / 4);
    int outer = 0;
    for (; outer < opt.max_outer; ++outer) {
        double J_start = J;
        // positions
        std::vector<std::size_t> order(R.pieces.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        if (d == 1) {
            for (std::size_t k : order) {
                double y0 = R.pieces[k].y[0], r = std::max(radius[k], 1e-7), yb = y0;
                auto f = [&](double v) {
                    R.pieces[k].y[0] = v;
                    return R.J();
                };
                double fb = golden_min(f, y0 - r, y0 + r, yb, 50);
                if (fb < J) {
                    R.pieces[k].y[0] = yb;
                    J = fb;
                    radius[k] = std::fabs(yb - y0) > 0.8 * r ? 2 * r : std::max(r * 0.5, 1e-7);
                } else {
                    R.pieces[k].y[0] = y0;
                    radius[k] = std::max(r * 0.5, 1e-7);
                }
            }
        } else {
            // joint gradient step on positions for smooth costs
            auto nu = R.nu();
            auto gnu = G.atom_gradient(nu);
            std::vector<std::vector<double>> dir(R.pieces.size(), std::vector<double>(d));
            std::size_t j = 0;
            for (std::size_t k = 0; k < R.pieces.size(); ++k) {
                const auto& p = R.pieces[k];
                double mass = m.weights[p.src] * p.f;
                for (int a = 0; a < d; ++a) {
                    double gq = mass * (p.y[a] - m.atom(p.src)[a]) / tau;
                    dir[k][a] = (mass > 0.0 ? gnu[j * d + a] : 0.0) + gq;
                }
                if (mass > 0.0) ++j;
            }
            double step = tau;
            for (int bt = 0; bt < 40; ++bt) {
                auto keep = R.pieces;
                for (std::size_t k = 0; k < R.pieces.size(); ++k) {
                    double mass = m.weights[R.pieces[k].src] * R.pieces[k].f;
                    if (mass <= 0.0) continue;
                    for (int a = 0; a < d; ++a) R.pieces[k].y[a] -= step * dir[k][a] / mass;
                }
                double Jc = R.J();
                if (Jc < J) {
                    J = Jc;
                    break;
                }
                R.pieces = std::move(keep);
                step *= 0.5;
            }
        }
        // weights between siblings
        for (std::size_t k = 0; k < R.pieces.size(); ++k) {
            // partners: heaviest and nearest sibling
            std::size_t heavy = k, near = k;
            double hf = -1.0, nd = kInf;
            for (std::size_t l = 0; l < R.pieces.size(); ++l) {
                if (l == k || R.pieces[l].src != R.pieces[k].src) continue;
                if (R.pieces[l].f > hf) hf = R.pieces[l].f, heavy = l;
                double dd = 0.0;
                for (int a = 0; a < d; ++a) dd += std::pow(R.pieces[l].y[a] - R.pieces[k].y[a], 2);
                if (dd < nd) nd = dd, near = l;
            }
            for (std::size_t l : {heavy, near}) {
                if (l == k || false) continue;
                double tot = R.pieces[k].f + R.pieces[l].f, fk0 = R.pieces[k].f, fb = fk0;
                if (tot <= 0.0) continue;
                auto f = [&](double v) {
                    R.pieces[k].f = v;
                    R.pieces[l].f = tot - v;
                    return R.J();
                };
                double best = golden_min(f, 0.0, tot, fb, 50);
                for (double edge : {0.0, tot}) {
                    double fe = f(edge);
                    if (fe < best) {
                        best = fe;
                        fb = edge;
                    }
                }
                if (best < J) {
                    f(fb);
                    J = best;
                } else {
                    f(fk0);
                }
                if (heavy == near) break;
            }
        }
        // drop empty pieces, keeping at least one per source
        {
            std::vector<int> live(m.size(), 0);
            for (const auto& p : R.pieces)
                if (p.f > 0.0) ++live[p.src];
            std::vector<Piece> kept;
            std::vector<double> kr;
            for (std::size_t k = 0; k < R.pieces.size(); ++k)
                if (R.pieces[k].f > 0.0 || live[R.pieces[k].src] == 0) {
                    if (R.pieces[k].f <= 0.0) live[R.pieces[k].src] = 1;
                    kept.push_back(R.pieces[k]);
                    kr.push_back(radius[k]);
                }
            R.pieces = std::move(kept);
            radius.assign(M, tau / 4);
            std::copy(kr.begin(), kr.end(), radius.begin());
        }
        // Frank-Wolfe insertion of new pieces
        bool inserted = false;
        if (d == 1 && static_cast<int>(R.pieces.size()) < M) {
            auto nu = R.nu();
            double lo = kInf, hi = -kInf;
            for (double v : nu.atoms) lo = std::min(lo, v), hi = std::max(hi, v);
            for (std::size_t i = 0; i < m.size(); ++i) lo = std::min(lo, m.atoms[i]), hi = std::max(hi, m.atoms[i]);
            if (G.ref) {
                for (const auto& q : line_pieces(*G.ref)) lo = std::min(lo, q.a), hi = std::max(hi, q.b);
            }
            lo -= tau;
            hi += tau;
            std::vector<double> ys(opt.fw_grid);
            for (int k = 0; k < opt.fw_grid; ++k) ys[k] = lo + (hi - lo) * (k + 0.5) / opt.fw_grid;
            auto phi = G.first_variation(nu, ys);
            std::vector<double> phi_at;
            {
                std::vector<double> py;
                for (const auto& p : R.pieces) py.push_back(p.y[0]);
                phi_at = G.first_variation(nu, py);
            }
            struct Cand {
                double gain;
                int src;
                double y;
            };
            std::vector<Cand> cands;
            for (std::size_t i = 0; i < m.size(); ++i) {
                double cur = 0.0;
                for (std::size_t k = 0; k < R.pieces.size(); ++k)
                    if (R.pieces[k].src == static_cast<int>(i)) {
                        double dy = R.pieces[k].y[0] - m.atoms[i];
                        cur += R.pieces[k].f * (phi_at[k] + dy * dy / (2 * tau));
                    }
                std::vector<double> sc(opt.fw_grid);
                for (int k = 0; k < opt.fw_grid; ++k) {
                    double dy = ys[k] - m.atoms[i];
                    sc[k] = phi[k] + dy * dy / (2 * tau);
                }
                // local minima of the score, up to four per source
                std::vector<std::pair<double, double>> mins;
                for (int k = 0; k < opt.fw_grid; ++k) {
                    bool lm = (k == 0 || sc[k] <= sc[k - 1]) && (k + 1 == opt.fw_grid || sc[k] < sc[k + 1]);
                    if (lm && cur - sc[k] > 1e-12) mins.push_back({sc[k], ys[k]});
                }
                std::sort(mins.begin(), mins.end());
                if (mins.size() > 4) mins.resize(4);
                for (const auto& [v, yv] : mins) cands.push_back({m.weights[i] * (cur - v), static_cast<int>(i), yv});
            }
            std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.gain > b.gain; });
            for (const auto& c : cands) {
                if (static_cast<int>(R.pieces.size()) >= M) break;
                auto keep = R.pieces;
                R.pieces.push_back({c.src, {c.y}, 0.0});
                std::size_t nk = R.pieces.size() - 1;
                double Jn = J;
                for (std::size_t k = 0; k < nk; ++k) {
                    if (R.pieces[k].src != c.src) continue;
                    double tot = R.pieces[k].f, fb = 0.0;
                    auto f = [&](double v) {
                        R.pieces[nk].f += v;
                        R.pieces[k].f = tot - v;
                        double val = R.J();
                        R.pieces[nk].f -= v;
                        R.pieces[k].f = tot;
                        return val;
                    };
                    double best = golden_min(f, 0.0, tot, fb, 50);
                    double fe = f(tot);
                    if (fe < best) best = fe, fb = tot;
                    if (best < Jn) {
                        R.pieces[nk].f += fb;
                        R.pieces[k].f = tot - fb;
                        Jn = best;
                    }
                }
                if (Jn < J - 1e-15) {
                    if (J - Jn > opt.tol * std::max(1.0, std::fabs(J))) inserted = true;
                    J = Jn;
                    radius[nk] = tau / 4;
                } else {
                    R.pieces = std::move(keep);
                }
            }
        }
        if (!inserted && J_start - J <= opt.tol * std::max(1.0, std::fabs(J))) break;
    }
    auto nu = R.nu();
    double w = wasserstein(as_euclid(m), nu, 2).value;
    double exact = G(nu) + w * w / (2.0 * tau);
    HopfLaxSolution s;
    s.value = std::min(exact, J);
    s.argmin = nu;
    s.iterations = outer;
    s.method = "relaxed_atomic";
    return s;
}

double vN_lower_quantization(double t, const std::vector<double>& x, const TerminalCost& G, double T) {
    tau_of(t, T);
    if (G.kind != CostKind::d1_to_reference) throw Error("vN_lower_quantization needs a d1_to_reference cost");
    const auto* g = std::get_if<GridDensity>(&*G.ref);
    bool leb = g && g->cells() == 1;
    if (!leb) throw Error("vN_lower_quantization needs the Lebesgue reference on the unit cube");
    int N = static_cast<int>(x.size() / G.dim);
    return d1_quantization_value(N, G.dim).lower_bound;
}

std::vector<double> replication_monotonicity(double t, const std::vector<double>& x, const TerminalCost& G,
                                             double T, const std::vector<int>& reps) {
    std::vector<double> out;
    int d = G.dim;
    std::size_t N = x.size() / d;
    for (int n : reps) {
        if (n < 1) throw Error("replication count must be >= 1");
        std::vector<double> xr;
        for (std::size_t i = 0; i < N; ++i)
            for (int r = 0; r < n; ++r) xr.insert(xr.end(), x.begin() + i * d, x.begin() + (i + 1) * d);
        out.push_back(vN_deterministic(t, xr, G, T).value);
    }
    return out;
}

ConvexityCheck lconvex_check(const TerminalCost& G, int trials, std::uint64_t seed) {
    if (trials < 1) throw Error("lconvex_check needs trials >= 1");
    ConvexityCheck res;
    int d = G.dim;
    for (int tr = 0; tr < trials; ++tr) {
        std::mt19937_64 rng(derive_seed(seed, "lconvex/" + std::to_string(tr)));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        // every other trial is the two-atom, constant-Y case
        int n = tr % 2 ? 2 : 2 + static_cast<int>(u(rng) * 15);
        int k = tr % 2 ? 1 : 1 + static_cast<int>(u(rng) * n);
        std::vector<double> p(n), X(n * d);
        std::vector<int> Y(n);
        double s = 0.0;
        for (int w = 0; w < n; ++w) {
            p[w] = tr % 2 ? 1.0 : 0.05 + u(rng);
            s += p[w];
            for (int a = 0; a < d; ++a) X[w * d + a] = u(rng);
            Y[w] = static_cast<int>(u(rng) * k);
        }
        for (double& v : p) v /= s;
        std::vector<double> cm(k * d, 0.0), cp(k, 0.0);
        for (int w = 0; w < n; ++w) {
            cp[Y[w]] += p[w];
            for (int a = 0; a < d; ++a) cm[Y[w] * d + a] += p[w] * X[w * d + a];
        }
        std::vector<double> cy, cw;
        for (int c = 0; c < k; ++c) {
            if (cp[c] <= 0.0) continue;
            for (int a = 0; a < d; ++a) cy.push_back(cm[c * d + a] / cp[c]);
            cw.push_back(cp[c]);
        }
        double gx = G(euclid_atoms(d, X, p)), gc = G(euclid_atoms(d, cy, cw));
        res.worst = std::max(res.worst, gc - gx);
    }
    res.pass = res.worst <= 1e-9;
    return res;
}

double moment_p(const EmpiricalMeasure& m, double p) {
    double s = 0.0;
    int d = m.domain.d;
    for (std::size_t i = 0; i < m.size(); ++i) {
        double r2 = 0.0;
        for (int a = 0; a < d; ++a) r2 += m.atom(i)[a] * m.atom(i)[a];
        s += m.weights[i] * std::pow(std::sqrt(r2), p);
    }
    return std::pow(s, 1.0 / p);
}

MomentCheck moment_transfer_check(double t, const std::vector<double>& x, const TerminalCost& G, double T, double p,
                                  double lipschitz, int M) {
    double tau = tau_of(t, T);
    if (p < 5) throw Error("moment_transfer_check needs p >= 5");
    if (!(lipschitz >= 0.0)) throw Error("moment_transfer_check needs a known Lipschitz constant");
    auto m = uniform_atoms(G.dim, x);
    auto vn = vN_deterministic(t, x, G, T);
    int N = static_cast<int>(m.size());
    auto rel = u_relaxed_atomic(t, m, G, T, std::max(M, N), 1, &vn.argmin.atoms);
    MomentCheck c;
    c.lhs = moment_p(rel.argmin, p);
    c.rhs = lipschitz * tau + moment_p(m, p);
    c.pass = c.lhs <= c.rhs + 1e-12;
    return c;
}

GapReport gap_report(double t, const std::vector<std::vector<double>>& xs, const TerminalCost& G, double T,
                     int extra_pieces) {
    GapReport rep;
    for (const auto& x : xs) {
        int N = static_cast<int>(x.size() / G.dim);
        auto vn = vN_deterministic(t, x, G, T);
        auto m = uniform_atoms(G.dim, x);
        std::vector<Measure> cands{m, vn.argmin};
        if (G.ref) cands.push_back(*G.ref);
        double up = u_upper_candidates(t, m, G, T, cands);
        RelaxedOptions opt;
        opt.max_outer = 30;
        opt.fw_grid = 256;
        auto rel = u_relaxed_atomic(t, m, G, T, N + extra_pieces, 1, &vn.argmin.atoms, opt);
        up = std::min(up, rel.value);
        rep.rows.push_back({N, vn.value, up, vn.value - up});
        rep.table.rows.push_back({static_cast<double>(N), vn.value - up, 0.0});
    }
    bool positive = rep.table.rows.size() >= 3;
    for (const auto& r : rep.table.rows) positive = positive && r.value > 0.0;
    if (positive) fit_in_place(rep.table);
    return rep;
}

QuantBoundCheck quantization_gap_check(double t, const std::vector<double>& x, const TerminalCost& G, double T,
                                       double lipschitz, int M) {
    auto m = uniform_atoms(G.dim, x);
    int N = static_cast<int>(m.size());
    auto vn = vN_deterministic(t, x, G, T);
    auto rel = u_relaxed_atomic(t, m, G, T, std::max(M, N), 1, &vn.argmin.atoms);
    Measure nubar = rel.argmin;
    double up = rel.value;
    if (G.ref) {
        double c = u_upper_candidates(t, m, G, T, {*G.ref});
        if (c < up) {
            up = c;
            nubar = *G.ref;
        }
    }
    QuantBoundCheck q;
    q.lhs = vn.value - up;
    q.rhs = 4.0 * lipschitz * lloyd_quantizer(nubar, N, 20, 1).d2_error;
    q.slack = q.rhs - q.lhs;
    q.pass = q.lhs <= q.rhs + 1e-6;
    return q;
}

StrictGap strict_gap_certificate(double t, double T, double margin) {
    auto G = TerminalCost::d1_to_reference(lebesgue_cube(1));
    std::vector<double> x{0.5};
    StrictGap s;
    s.vN = vN_deterministic(t, x, G, T).value;
    auto m = uniform_atoms(1, x);
    s.u_upper = std::min(u_upper_candidates(t, m, G, T, {lebesgue_cube(1)}), u_relaxed_atomic(t, m, G, T, 32, 1).value);
    s.margin = margin;
    s.certified = s.u_upper < s.vN - margin;
    return s;
}

}  // namespace mfclab
