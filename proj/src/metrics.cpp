#include "mfclab/metrics.hpp"

#include <cmath>
#include <map>
#include <random>

#include "mfclab/simd.hpp"
#include "mfclab/transport.hpp"

namespace mfclab {

namespace {

void same_domain(const Measure& m, const Measure& mp) {
    if (!(domain_of(m) == domain_of(mp))) throw Error("measures live on different domains");
}

struct Support {
    std::vector<double> pts;
    std::vector<double> w;
    double grid_h = 0.0;
};

Support support_of(const Measure& m) {
    Support s;
    if (const auto* e = std::get_if<EmpiricalMeasure>(&m)) {
        s.pts = e->atoms;
        s.w = e->weights;
        return s;
    }
    const auto& g = std::get<GridDensity>(m);
    int d = g.domain.d;
    std::vector<double> c(d);
    for (std::size_t j = 0; j < g.cells(); ++j) {
        if (g.masses[j] <= 0.0) continue;
        g.center(j, c.data());
        s.pts.insert(s.pts.end(), c.begin(), c.end());
        s.w.push_back(g.masses[j]);
    }
    for (int a = 0; a < d; ++a) s.grid_h = std::max(s.grid_h, g.width(a));
    if (s.w.size() > 4096) throw Error("grid support exceeds 4096 cells for exact transport");
    return s;
}

double ground(const Domain& dom, const double* a, const double* b, int p) {
    double q = dom.dist2(a, b);
    return p == 2 ? q : std::sqrt(q);
}

}  // namespace

double tv_distance(const Measure& m, const Measure& mp) {
    same_domain(m, mp);
    const auto* e1 = std::get_if<EmpiricalMeasure>(&m);
    const auto* e2 = std::get_if<EmpiricalMeasure>(&mp);
    if (e1 && e2) {
        std::map<std::vector<double>, double> diff;
        int d = e1->domain.d;
        for (std::size_t i = 0; i < e1->size(); ++i)
            diff[std::vector<double>(e1->atom(i), e1->atom(i) + d)] += e1->weights[i];
        for (std::size_t i = 0; i < e2->size(); ++i)
            diff[std::vector<double>(e2->atom(i), e2->atom(i) + d)] -= e2->weights[i];
        double s = 0.0;
        for (const auto& [k, v] : diff) s += std::fabs(v);
        return 0.5 * s;
    }
    const GridDensity* g1 = std::get_if<GridDensity>(&m);
    const GridDensity* g2 = std::get_if<GridDensity>(&mp);
    GridDensity b1, b2;
    if (!g1) {
        b1 = bin_to_grid(*e1, g2->resolution);
        g1 = &b1;
    }
    if (!g2) {
        b2 = bin_to_grid(*e2, g1->resolution);
        g2 = &b2;
    }
    if (g1->resolution != g2->resolution) throw Error("tv_distance needs grids of equal resolution");
    double s = 0.0;
    for (std::size_t j = 0; j < g1->cells(); ++j) s += std::fabs(g1->masses[j] - g2->masses[j]);
    return 0.5 * s;
}

MetricReport wasserstein(const Measure& m, const Measure& mp, int p) {
    if (p != 1 && p != 2) throw Error("wasserstein supports p = 1, 2");
    same_domain(m, mp);
    const Domain& dom = domain_of(m);
    MetricReport r;
    if (dom.d == 1) {
        auto a = line_pieces(m), b = line_pieces(mp);
        if (dom.kind == DomainKind::torus) {
            if (p == 1) {
                r.value = circle_d1(a, b);
                r.method = "circle_cdf_median";
            } else {
                r.value = std::sqrt(circle_transport_cost(a, b, 2));
                r.method = "circle_quantile_shift";
            }
        } else {
            double c = line_transport_cost(a, b, p);
            r.value = p == 2 ? std::sqrt(c) : c;
            r.method = "quantile_1d";
        }
        r.error_bound = 1e-12;
        return r;
    }
    bool grid1 = std::holds_alternative<GridDensity>(m), grid2 = std::holds_alternative<GridDensity>(mp);
    if (grid1 != grid2) throw Error("mixed empirical/grid transport in d >= 2 needs a common discretization");
    Support s1 = support_of(m), s2 = support_of(mp);
    int d = dom.d;
    std::size_t n = s1.w.size(), k = s2.w.size();
    std::vector<double> cost(n * k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j)
            cost[i * k + j] = ground(dom, s1.pts.data() + i * d, s2.pts.data() + j * d, p);
    bool uniform = n == k && !grid1;
    if (uniform)
        for (std::size_t i = 0; i < n && uniform; ++i)
            uniform = std::fabs(s1.w[i] - 1.0 / n) < 1e-14 && std::fabs(s2.w[i] - 1.0 / n) < 1e-14;
    double c;
    if (uniform) {
        c = solve_assignment(cost, static_cast<int>(n)).cost / n;
        r.method = "assignment";
    } else {
        c = solve_transport(s1.w, s2.w, cost).cost;
        r.method = grid1 ? "flow_cell_centers" : "flow";
    }
    r.value = p == 2 ? std::sqrt(std::max(c, 0.0)) : c;
    r.error_bound = 0.5 * std::sqrt(static_cast<double>(d)) * (s1.grid_h + s2.grid_h) + 1e-10;
    return r;
}

double fourier_weighted_norm(const FourierCoeffs& q, double s) {
    if (s < 0.0) throw Error("negative Sobolev index");
    std::size_t L = 2 * q.K + 1, total = q.c.size();
    std::vector<double> re(total), im(total), w(total);
    std::vector<int> k(q.d);
    for (std::size_t idx = 0; idx < total; ++idx) {
        std::size_t r = idx;
        double n2 = 0.0;
        for (int a = 0; a < q.d; ++a) {
            k[a] = static_cast<int>(r % L) - q.K;
            r /= L;
            n2 += static_cast<double>(k[a]) * k[a];
        }
        double ks = n2 == 0.0 ? (s == 0.0 ? 1.0 : 0.0) : std::pow(std::sqrt(n2), s);
        w[idx] = 1.0 / ((1.0 + ks) * (1.0 + ks));
        re[idx] = q.c[idx].real();
        im[idx] = q.c[idx].imag();
    }
    return std::sqrt(simd::kernels().weighted_sumsq(re.data(), im.data(), w.data(), total));
}

double sobolev_dual_norm(const FourierCoeffs& q, int s) {
    if (s < 1) throw Error("sobolev_dual_norm needs s >= 1");
    return fourier_weighted_norm(q, s);
}

int sobolev_truncation(int s, int d, double tol, int cap) {
    if (2 * s <= d) throw Error("H^{-s} norm of a measure needs 2s > d");
    // shell |k|_inf = j has at most 2d(2j+1)^{d-1} <= 2d 3^{d-1} j^{d-1} points, each |k| >= j
    double c = 8.0 * d * std::pow(3.0, d - 1) / (2 * s - d);
    for (int K = 1; K <= cap; ++K)
        if (c * std::pow(static_cast<double>(K), d - 2 * s) < tol) return K;
    throw Error("Sobolev truncation exceeds the coefficient cap");
}

double sobolev_dual_norm(const Measure& m, const Measure& mp, int s) {
    same_domain(m, mp);
    int K = sobolev_truncation(s, domain_of(m).d);
    return sobolev_dual_norm(fourier_difference(m, mp, K), s);
}

namespace {

struct TrigBasis {
    int d, K, M;
    std::vector<std::vector<int>> freqs;
    std::vector<double> cosv, sinv;  // [point * nk + f]

    TrigBasis(int d_, int K_, int M_) : d(d_), K(K_), M(M_) {
        int L = 2 * K + 1;
        int total = 1;
        for (int a = 0; a < d; ++a) total *= L;
        for (int idx = 0; idx < total; ++idx) {
            std::vector<int> k(d);
            int r = idx;
            for (int a = 0; a < d; ++a) {
                k[a] = r % L - K;
                r /= L;
            }
            // half-space: last nonzero coordinate positive
            int lead = 0;
            for (int a = d - 1; a >= 0; --a)
                if (k[a] != 0) {
                    lead = k[a];
                    break;
                }
            if (lead > 0) freqs.push_back(k);
        }
        std::size_t npts = 1;
        for (int a = 0; a < d; ++a) npts *= M;
        std::size_t nk = freqs.size();
        cosv.resize(npts * nk);
        sinv.resize(npts * nk);
        for (std::size_t p = 0; p < npts; ++p) {
            std::size_t r = p;
            std::vector<double> x(d);
            for (int a = 0; a < d; ++a) {
                x[a] = static_cast<double>(r % M) / M;
                r /= M;
            }
            for (std::size_t f = 0; f < nk; ++f) {
                double t = 0.0;
                for (int a = 0; a < d; ++a) t += freqs[f][a] * x[a];
                cosv[p * nk + f] = std::cos(2.0 * kPi * t);
                sinv[p * nk + f] = std::sin(2.0 * kPi * t);
            }
        }
    }

    // certified upper bound on |phi|_inf + |D phi|_inf + |D^2 phi|_inf, coefficients [a_f, b_f]
    double norm(const std::vector<double>& c) const {
        std::size_t nk = freqs.size(), npts = cosv.size() / nk;
        double s0 = 0.0;
        std::vector<double> s1(d, 0.0), s2(d * d, 0.0), g(d), h(d * d);
        const double tp = 2.0 * kPi;
        for (std::size_t p = 0; p < npts; ++p) {
            double v = 0.0;
            std::fill(g.begin(), g.end(), 0.0);
            std::fill(h.begin(), h.end(), 0.0);
            for (std::size_t f = 0; f < nk; ++f) {
                double cs = cosv[p * nk + f], sn = sinv[p * nk + f];
                double a = c[2 * f], b = c[2 * f + 1];
                double val = a * cs + b * sn, der = -a * sn + b * cs;
                v += val;
                for (int i = 0; i < d; ++i) {
                    g[i] += tp * freqs[f][i] * der;
                    for (int j = 0; j < d; ++j) h[i * d + j] -= tp * tp * freqs[f][i] * freqs[f][j] * val;
                }
            }
            s0 = std::max(s0, std::fabs(v));
            for (int i = 0; i < d; ++i) s1[i] = std::max(s1[i], std::fabs(g[i]));
            for (int i = 0; i < d * d; ++i) s2[i] = std::max(s2[i], std::fabs(h[i]));
        }
        double factor = 1.0 / (1.0 - kPi * d * K / M);
        double n1 = 0.0, n2 = 0.0;
        for (double v : s1) n1 += v * v;
        for (double v : s2) n2 += v * v;
        return factor * (s0 + std::sqrt(n1) + std::sqrt(n2));
    }
};

}  // namespace

double w2inf_dual_estimate(const Measure& m, const Measure& mp, int trials, std::uint64_t seed) {
    same_domain(m, mp);
    const Domain& dom = domain_of(m);
    if (dom.kind != DomainKind::torus || dom.d > 2) throw Error("w2inf estimate needs torus(1) or torus(2)");
    const int K = dom.d == 1 ? 4 : 3;
    const int M = dom.d == 1 ? 256 : 96;
    TrigBasis basis(dom.d, K, M);
    FourierCoeffs q = fourier_difference(m, mp, K);
    std::size_t nk = basis.freqs.size();
    std::vector<double> g(2 * nk);
    for (std::size_t f = 0; f < nk; ++f) {
        auto z = q.at(basis.freqs[f].data());
        g[2 * f] = z.real();
        g[2 * f + 1] = -z.imag();
    }
    double gn = 0.0;
    for (double v : g) gn += v * v;
    gn = std::sqrt(gn);
    if (gn < 1e-15) return 0.0;
    auto ratio = [&](const std::vector<double>& c) {
        double l = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i) l += g[i] * c[i];
        double n = basis.norm(c);
        return n > 0.0 ? l / n : 0.0;
    };
    double best = 0.0;
    for (int t = 0; t < trials; ++t) {
        std::mt19937_64 rng(derive_seed(seed, "w2inf/" + std::to_string(t)));
        std::normal_distribution<double> nd;
        std::vector<double> c(2 * nk);
        if (t == 0) c = g;
        else
            for (double& v : c) v = nd(rng);
        double r = ratio(c), step = 0.5;
        for (int it = 0; it < 40; ++it) {
            double cn = 0.0;
            for (double v : c) cn += v * v;
            cn = std::sqrt(cn);
            std::vector<double> u(c.size());
            bool toward_g = it % 2 == 0;
            double un = 0.0;
            for (std::size_t i = 0; i < u.size(); ++i) {
                u[i] = toward_g ? g[i] / gn : nd(rng);
                un += u[i] * u[i];
            }
            un = std::sqrt(un);
            std::vector<double> cand(c);
            for (std::size_t i = 0; i < c.size(); ++i) cand[i] += step * cn * u[i] / un;
            double rc = ratio(cand);
            if (rc > r) {
                c = std::move(cand);
                r = rc;
                step = std::min(step * 1.5, 2.0);
            } else {
                step *= 0.5;
            }
        }
        best = std::max(best, r);
    }
    return best;
}

}  // namespace mfclab
