#include "mfclab/quantize.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "mfclab/metrics.hpp"
#include "mfclab/simd.hpp"
#include "mfclab/transport.hpp"

namespace mfclab {

LogLogFit fit_loglog_slope(const RateTable& t) {
    if (t.rows.size() < 3) throw Error("slope fit needs at least 3 rows");
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        if (!(t.rows[i].param > 0.0) || !(t.rows[i].value > 0.0)) throw Error("log-log fit needs positive values");
        if (i && !(t.rows[i].param > t.rows[i - 1].param)) throw Error("parameters must be strictly increasing");
    }
    double n = static_cast<double>(t.rows.size()), sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& r : t.rows) {
        double x = std::log(r.param), y = std::log(r.value);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    double icpt = (sy - slope * sx) / n;
    double rss = 0.0;
    for (const auto& r : t.rows) {
        double e = std::log(r.value) - icpt - slope * std::log(r.param);
        rss += e * e;
    }
    return {slope, icpt, std::sqrt(rss / n)};
}

void fit_in_place(RateTable& t) {
    auto f = fit_loglog_slope(t);
    t.slope = f.slope;
    t.intercept = f.intercept;
    t.residual = f.residual;
}

RateExponents rate_exponents(int d) {
    if (d <= 0) throw Error("dimension must be positive");
    RateExponents r;
    r.d = d;
    bool even = d % 2 == 0;
    r.gamma = {1, even ? 3L * d + 19 : 3L * d + 16};
    r.gamma_prime = {1, even ? d + 7L : d + 6L};
    r.s_star = even ? d / 2 + 3 : (d + 5) / 2;
    r.rnd_tag = d >= 3 ? "N^(-1/d)" : (d == 2 ? "N^(-1/2) log N" : "N^(-1/2)");
    r.rdn_tag = d < 4 ? "N^(-1/4)" : (d == 4 ? "N^(-1/4) log(1+N)^(1/2)" : "N^(-1/d)");
    return r;
}

double fournier_guillin_rate(double N, int d) {
    if (!(N >= 2.0)) throw Error("rate needs N >= 2");
    if (d >= 3) return std::pow(N, -1.0 / d);
    if (d == 2) return std::log(N) / std::sqrt(N);
    return 1.0 / std::sqrt(N);
}

double moment_quantization_rate(double N, int d) {
    if (d < 4) return std::pow(N, -0.25);
    if (d == 4) return std::pow(N, -0.25) * std::sqrt(std::log1p(N));
    return std::pow(N, -1.0 / d);
}

EmpiricalMeasure grid_center_config(int N, int d) {
    if (N < 1 || d < 1) throw Error("grid_center_config needs N, d >= 1");
    int k = static_cast<int>(std::floor(std::pow(static_cast<double>(N), 1.0 / d) + 1e-9));
    while (std::pow(k + 1.0, d) <= N) ++k;
    auto centers = [&](int kk, int count, std::vector<double>& out) {
        for (int idx = 0; idx < count; ++idx) {
            int r = idx;
            for (int a = 0; a < d; ++a) {
                out.push_back((r % kk + 0.5) / kk);
                r /= kk;
            }
        }
    };
    int full = 1;
    for (int a = 0; a < d; ++a) full *= k;
    std::vector<double> pts;
    centers(k, full, pts);
    // remainder on the next finer lattice
    if (N > full) centers(k + 1, N - full, pts);
    return empirical_from_points(pts, Domain::cube(d));
}

namespace {

struct Discrete {
    std::vector<double> pts, w;
    double d2_radius = 0.0;
    double d1_radius = 0.0;
};

// cell-center points; radius bounds the d2 / d1 distance to the measure itself
Discrete discretize(const Measure& nu, int max_points) {
    Discrete out;
    if (const auto* e = std::get_if<EmpiricalMeasure>(&nu)) {
        out.pts = e->atoms;
        out.w = e->weights;
        return out;
    }
    const auto& g = std::get<GridDensity>(nu);
    int d = g.domain.d;
    std::size_t C = g.cells();
    int s = std::max(1, static_cast<int>(std::floor(std::pow(static_cast<double>(max_points) / C, 1.0 / d))));
    GridDensity f = refine_grid(g, s);
    std::vector<double> c(d);
    double h2 = 0.0, hmax = 0.0;
    for (int a = 0; a < d; ++a) {
        h2 += f.width(a) * f.width(a);
        hmax = std::max(hmax, f.width(a));
    }
    for (std::size_t j = 0; j < f.cells(); ++j) {
        if (f.masses[j] <= 0.0) continue;
        f.center(j, c.data());
        out.pts.insert(out.pts.end(), c.begin(), c.end());
        out.w.push_back(f.masses[j]);
    }
    out.d2_radius = std::sqrt(h2 / 12.0);
    out.d1_radius = std::sqrt(h2) / 2.0;
    return out;
}

bool is_lebesgue(const Measure& nu) {
    const auto* g = std::get_if<GridDensity>(&nu);
    if (!g || g->domain.kind != DomainKind::cube) return false;
    for (double v : g->masses)
        if (std::fabs(v - g->masses[0]) > 1e-15) return false;
    return true;
}

QuantizerResult quantile_means(const Measure& nu, int N) {
    auto pieces = line_pieces(nu);
    std::vector<double> y(N);
    for (int i = 0; i < N; ++i) y[i] = N * quantile_integral(pieces, double(i) / N, double(i + 1) / N);
    const Domain& dom = domain_of(nu);
    EmpiricalMeasure m{dom, y, std::vector<double>(N, 1.0 / N)};
    if (dom.kind == DomainKind::torus) {
        for (double& v : m.atoms) v = wrap01(v);
        // on the circle the cut point matters; quantile means from a rotated cut are also feasible
        double best = d2(nu, m).value;
        QuantizerResult r{m, best, "quantile_means_circle"};
        for (int c = 1; c < 16; ++c) {
            double shift = c / 16.0;
            Measure rot = translate(nu, std::vector<double>{-shift});
            auto pr = line_pieces(rot);
            EmpiricalMeasure cand{dom, std::vector<double>(N), std::vector<double>(N, 1.0 / N)};
            for (int i = 0; i < N; ++i)
                cand.atoms[i] = wrap01(N * quantile_integral(pr, double(i) / N, double(i + 1) / N) + shift);
            double v = d2(nu, cand).value;
            if (v < best) {
                best = v;
                r = {cand, v, "quantile_means_circle"};
            }
        }
        return r;
    }
    return {m, d2(nu, m).value, "quantile_means"};
}

// one capacity-constrained Lloyd run on the discretization
std::pair<std::vector<double>, double> lloyd_run(const Discrete& disc, const Domain& dom, std::vector<double> y, int N,
                                                 int iters) {
    int d = dom.d;
    std::size_t n = disc.w.size();
    std::vector<double> b(N, 1.0 / N), cost(n * N);
    double prev = std::numeric_limits<double>::infinity();
    std::vector<double> best_y = y;
    double best = prev;
    for (int it = 0; it < iters; ++it) {
        for (std::size_t j = 0; j < n; ++j)
            for (int i = 0; i < N; ++i) cost[j * N + i] = dom.dist2(disc.pts.data() + j * d, y.data() + i * d);
        auto tr = solve_transport(disc.w, b, cost);
        if (tr.cost < best) {
            best = tr.cost;
            best_y = y;
        }
        if (prev - tr.cost < 1e-14) break;
        prev = tr.cost;
        // barycentres of the plan (displacements wrapped on the torus)
        std::vector<double> acc(N * d, 0.0);
        for (std::size_t j = 0; j < n; ++j)
            for (int i = 0; i < N; ++i) {
                double f = tr.plan[j * N + i];
                if (f <= 0.0) continue;
                for (int a = 0; a < d; ++a) {
                    double diff = disc.pts[j * d + a] - y[i * d + a];
                    if (dom.kind == DomainKind::torus) diff -= std::round(diff);
                    acc[i * d + a] += f * diff;
                }
            }
        for (int i = 0; i < N; ++i)
            for (int a = 0; a < d; ++a) {
                double v = y[i * d + a] + acc[i * d + a] * N;
                y[i * d + a] = dom.kind == DomainKind::torus ? wrap01(v) : v;
            }
    }
    return {best_y, std::sqrt(std::max(best, 0.0))};
}

}  // namespace

QuantizerResult lloyd_quantizer(const Measure& nu, int N, int iters, std::uint64_t seed, int restarts) {
    if (iters < 1) throw Error("lloyd_quantizer needs iters >= 1");
    if (N < 1) throw Error("lloyd_quantizer needs N >= 1");
    const Domain& dom = domain_of(nu);
    if (dom.d == 1) return quantile_means(nu, N);
    Discrete disc = discretize(nu, 256);
    int d = dom.d;
    std::vector<std::vector<double>> starts;
    if (dom.kind == DomainKind::cube) starts.push_back(grid_center_config(N, d).atoms);
    for (int r = static_cast<int>(starts.size()); r < std::max(restarts, 1); ++r)
        starts.push_back(sample_iid(nu, N, derive_seed(seed, "lloyd/" + std::to_string(r))));
    std::vector<std::pair<std::vector<double>, double>> runs(starts.size());
    parallel_for(starts.size(), [&](std::size_t r) { runs[r] = lloyd_run(disc, dom, starts[r], N, iters); });
    QuantizerResult best{EmpiricalMeasure{dom, {}, {}}, std::numeric_limits<double>::infinity(), "lloyd_transport"};
    for (const auto& [y, err] : runs) {
        double cert = err + disc.d2_radius;
        if (cert < best.d2_error || (cert == best.d2_error && y < best.atoms.atoms)) {
            best.d2_error = cert;
            best.atoms = EmpiricalMeasure{dom, y, std::vector<double>(N, 1.0 / N)};
        }
    }
    if (is_lebesgue(nu)) {
        // exact value of the centred lattice when N is a perfect power
        int k = static_cast<int>(std::lround(std::pow(static_cast<double>(N), 1.0 / d)));
        if (std::lround(std::pow(static_cast<double>(k), d)) == N) {
            double exact = std::sqrt(d / (12.0 * k * k));
            if (exact < best.d2_error) {
                best.d2_error = exact;
                best.atoms = grid_center_config(N, d);
                best.method = "grid_centers_exact";
            }
        }
    }
    return best;
}

QuantizationValue d1_quantization_value(int N, int d) {
    if (N < 1 || N > 1024) throw Error("d1_quantization_value needs 1 <= N <= 1024");
    if (d == 1) {
        // Voronoi / median iteration from a seeded start, compared with the centred grid
        std::mt19937_64 rng(derive_seed(0x5eed, "vN/" + std::to_string(N)));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<double> y(N);
        for (double& v : y) v = u(rng);
        std::sort(y.begin(), y.end());
        for (int it = 0; it < 200; ++it) {
            std::vector<double> ny(N);
            for (int i = 0; i < N; ++i) {
                double a = i ? 0.5 * (y[i - 1] + y[i]) : 0.0, b = i + 1 < N ? 0.5 * (y[i] + y[i + 1]) : 1.0;
                ny[i] = 0.5 * (a + b);
            }
            y = ny;
        }
        auto value_of = [&](const std::vector<double>& at) {
            std::vector<double> w(N);
            for (int i = 0; i < N; ++i) {
                double a = i ? 0.5 * (at[i - 1] + at[i]) : 0.0, b = i + 1 < N ? 0.5 * (at[i] + at[i + 1]) : 1.0;
                w[i] = b - a;
            }
            std::vector<LinePiece> atoms, leb{{0.0, 1.0, 1.0}};
            for (int i = 0; i < N; ++i) atoms.push_back({at[i], at[i], w[i]});
            return line_transport_cost(sort_pieces(atoms), leb, 1);
        };
        std::vector<double> c(N);
        for (int i = 0; i < N; ++i) c[i] = (i + 0.5) / N;
        double v = std::min(value_of(y), value_of(c));
        return {v, 1.0 / (4.0 * N), "voronoi_median_1d"};
    }
    if (d != 2) throw Error("d1_quantization_value supports d = 1, 2");
    // mean distance from the centre of a unit square to a uniform point
    const double c2 = (std::sqrt(2.0) + std::log(1.0 + std::sqrt(2.0))) / 6.0;
    double best = std::numeric_limits<double>::infinity();
    std::string method;
    int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(N))));
    if (k * k == N) {
        best = c2 / k;
        method = "grid_centers_exact";
    }
    const int R = 256;
    const double h = 1.0 / R;
    std::vector<double> pts(2 * R * R);
    for (int j = 0; j < R; ++j)
        for (int i = 0; i < R; ++i) {
            pts[2 * (j * R + i)] = (i + 0.5) * h;
            pts[2 * (j * R + i) + 1] = (j + 0.5) * h;
        }
    const auto& K = simd::kernels();
    const int restarts = 4;
    std::vector<double> results(restarts);
    parallel_for(restarts, [&](std::size_t r) {
        std::vector<double> y = r == 0 ? grid_center_config(N, 2).atoms
                                       : sample_iid(uniform_grid(Domain::cube(2), 1), N,
                                                    derive_seed(0x5eed, "vN2/" + std::to_string(N) + "/" + std::to_string(r)));
        std::vector<double> dist(N);
        std::vector<int> owner(R * R);
        double val = 0.0;
        for (int it = 0; it < 40; ++it) {
            val = 0.0;
            for (int p = 0; p < R * R; ++p) {
                // nearest atom: distances from the point to every atom
                K.sqdist_rows(dist.data(), y.data(), N, 2, pts.data() + 2 * p);
                int bi = static_cast<int>(std::min_element(dist.begin(), dist.end()) - dist.begin());
                owner[p] = bi;
                val += std::sqrt(dist[bi]) * h * h;
            }
            // one Weiszfeld step per cell
            std::vector<double> num(2 * N, 0.0), den(N, 0.0);
            for (int p = 0; p < R * R; ++p) {
                int i = owner[p];
                double dx = pts[2 * p] - y[2 * i], dy = pts[2 * p + 1] - y[2 * i + 1];
                double w = 1.0 / std::max(std::sqrt(dx * dx + dy * dy), 1e-12);
                num[2 * i] += w * pts[2 * p];
                num[2 * i + 1] += w * pts[2 * p + 1];
                den[i] += w;
            }
            for (int i = 0; i < N; ++i)
                if (den[i] > 0.0) {
                    y[2 * i] = num[2 * i] / den[i];
                    y[2 * i + 1] = num[2 * i + 1] / den[i];
                }
        }
        results[r] = val + c2 * h;
    });
    for (double v : results)
        if (v < best) {
            best = v;
            method = "lloyd_weiszfeld";
        }
    // any set of area a has mean distance >= that of the centred disc, (2/3) sqrt(a/pi)
    return {best, 2.0 / (3.0 * std::sqrt(kPi * N)), method};
}

RateTable empirical_rate_mc(const Measure& m, const std::vector<int>& Ns, int trials, std::uint64_t seed) {
    if (trials < 30) throw Error("empirical_rate_mc needs at least 30 trials");
    const Domain& dom = domain_of(m);
    RateTable t;
    for (int N : Ns) {
        std::vector<double> vals(trials);
        parallel_for(trials, [&](std::size_t k) {
            std::string key = "rate/" + std::to_string(N) + "/" + std::to_string(k);
            auto x = sample_iid(m, N, derive_seed(seed, key));
            auto ex = EmpiricalMeasure{dom, x, std::vector<double>(N, 1.0 / N)};
            if (dom.d == 1) {
                vals[k] = d1(ex, m).value;
            } else {
                auto y = sample_iid(m, N, derive_seed(seed, key + "/pair"));
                vals[k] = d1(ex, EmpiricalMeasure{dom, y, std::vector<double>(N, 1.0 / N)}).value;
            }
        });
        double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / trials, var = 0.0;
        for (double v : vals) var += (v - mean) * (v - mean);
        var /= (trials - 1);
        t.rows.push_back({static_cast<double>(N), mean, std::sqrt(var / trials)});
    }
    bool positive = t.rows.size() >= 3;
    for (const auto& r : t.rows) positive = positive && r.value > 0.0;
    if (positive) fit_in_place(t);
    return t;
}

}  // namespace mfclab
