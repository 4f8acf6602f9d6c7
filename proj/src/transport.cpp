#include "mfclab/transport.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace mfclab {

std::vector<LinePiece> sort_pieces(std::vector<LinePiece> p) {
    std::erase_if(p, [](const LinePiece& q) { return q.w <= 0.0; });
    std::sort(p.begin(), p.end(), [](const LinePiece& x, const LinePiece& y) {
        return x.a < y.a || (x.a == y.a && x.b < y.b);
    });
    return p;
}

std::vector<LinePiece> line_pieces(const Measure& m) {
    const Domain& dom = domain_of(m);
    if (dom.d != 1) throw Error("line transport needs a 1-D measure");
    std::vector<LinePiece> out;
    if (const auto* e = std::get_if<EmpiricalMeasure>(&m)) {
        for (std::size_t i = 0; i < e->size(); ++i) out.push_back({e->atoms[i], e->atoms[i], e->weights[i]});
    } else {
        const auto& g = std::get<GridDensity>(m);
        double h = g.width(0);
        for (std::size_t i = 0; i < g.cells(); ++i) out.push_back({i * h, (i + 1) * h, g.masses[i]});
    }
    return sort_pieces(std::move(out));
}

double line_cdf(const std::vector<LinePiece>& p, double x) {
    double s = 0.0;
    for (const auto& q : p) {
        if (x >= q.b) s += q.w;
        else if (x > q.a) s += q.w * (x - q.a) / (q.b - q.a);
    }
    return s;
}

namespace {

// quantile segment: u in [u0,u1], value linear q0 -> q1
struct QSeg {
    double u0, u1, q0, q1;
    double at(double u) const {
        if (u1 <= u0) return q0;
        return q0 + (q1 - q0) * (u - u0) / (u1 - u0);
    }
};

std::vector<QSeg> quantile_segments(const std::vector<LinePiece>& p) {
    double tot = 0.0;
    for (const auto& q : p) tot += q.w;
    std::vector<QSeg> s;
    double u = 0.0;
    for (const auto& q : p) {
        double du = q.w / tot;
        s.push_back({u, u + du, q.a, q.b});
        u += du;
    }
    if (!s.empty()) s.back().u1 = 1.0;
    return s;
}

double abs_linear_integral(double d0, double d1, double len) {
    if (len <= 0.0) return 0.0;
    if (d0 * d1 >= 0.0) return 0.5 * (std::fabs(d0) + std::fabs(d1)) * len;
    return len * (d0 * d0 + d1 * d1) / (2.0 * (std::fabs(d0) + std::fabs(d1)));
}

double power_linear_integral(double d0, double d1, double len, int p) {
    if (p == 1) return abs_linear_integral(d0, d1, len);
    return len * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
}

double merged_cost(const std::vector<QSeg>& s1, const std::vector<QSeg>& s2, int p, double lo, double hi) {
    std::size_t i = 0, j = 0;
    double u = lo, total = 0.0;
    while (i < s1.size() && s1[i].u1 <= u) ++i;
    while (j < s2.size() && s2[j].u1 <= u) ++j;
    while (u < hi && i < s1.size() && j < s2.size()) {
        double nu = std::min({s1[i].u1, s2[j].u1, hi});
        if (nu > u) {
            double d0 = s1[i].at(u) - s2[j].at(u), d1 = s1[i].at(nu) - s2[j].at(nu);
            total += power_linear_integral(d0, d1, nu - u, p);
        }
        u = nu;
        if (s1[i].u1 <= u) ++i;
        if (j < s2.size() && s2[j].u1 <= u) ++j;
    }
    return total;
}

}  // namespace

double quantile_integral(const std::vector<LinePiece>& p, double u0, double u1) {
    double s = 0.0;
    for (const auto& q : quantile_segments(p)) {
        double a = std::max(q.u0, u0), b = std::min(q.u1, u1);
        if (b > a) s += 0.5 * (q.at(a) + q.at(b)) * (b - a);
    }
    return s;
}

namespace {

void check_p(int p) {
    if (p != 1 && p != 2) throw Error("only p = 1 and p = 2 are supported");
}

}  // namespace

double line_transport_cost(const std::vector<LinePiece>& p1, const std::vector<LinePiece>& p2, int p) {
    check_p(p);
    return merged_cost(quantile_segments(p1), quantile_segments(p2), p, 0.0, 1.0);
}

double circle_d1(const std::vector<LinePiece>& p1, const std::vector<LinePiece>& p2) {
    // breakpoints of F1 - F2 on [0,1]
    std::vector<double> xs{0.0, 1.0};
    for (const auto* p : {&p1, &p2})
        for (const auto& q : *p) {
            xs.push_back(q.a);
            xs.push_back(q.b);
        }
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    // value just right of x0 and just left of x1 on each open interval
    auto cdf_right = [](const std::vector<LinePiece>& p, double x) {
        double s = 0.0;
        for (const auto& q : p) {
            if (x >= q.b) s += q.w;
            else if (x > q.a) s += q.w * (x - q.a) / (q.b - q.a);
            else if (q.a == q.b && x >= q.a) s += q.w;
        }
        return s;
    };
    auto cdf_left = [](const std::vector<LinePiece>& p, double x) {
        double s = 0.0;
        for (const auto& q : p) {
            if (q.a == q.b) {
                if (x > q.a) s += q.w;
            } else if (x >= q.b) {
                s += q.w;
            } else if (x > q.a) {
                s += q.w * (x - q.a) / (q.b - q.a);
            }
        }
        return s;
    };
    struct Seg {
        double len, v0, v1;
    };
    std::vector<Seg> segs;
    for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
        double a = xs[k], b = xs[k + 1];
        if (b <= a) continue;
        segs.push_back({b - a, cdf_right(p1, a) - cdf_right(p2, a), cdf_left(p1, b) - cdf_left(p2, b)});
    }
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : segs) {
        lo = std::min({lo, s.v0, s.v1});
        hi = std::max({hi, s.v0, s.v1});
    }
    auto below = [&](double c) {
        double m = 0.0;
        for (const auto& s : segs) {
            double mn = std::min(s.v0, s.v1), mx = std::max(s.v0, s.v1);
            if (mx - mn <= 0.0) m += (mn <= c) ? s.len : 0.0;
            else m += s.len * std::clamp((c - mn) / (mx - mn), 0.0, 1.0);
        }
        return m;
    };
    for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
        double c = 0.5 * (lo + hi);
        (below(c) >= 0.5 ? hi : lo) = c;
    }
    double c = 0.5 * (lo + hi);
    double total = 0.0;
    for (const auto& s : segs) total += abs_linear_integral(s.v0 - c, s.v1 - c, s.len);
    return total;
}

double circle_transport_cost(const std::vector<LinePiece>& p1, const std::vector<LinePiece>& p2, int p) {
    check_p(p);
    auto s1 = quantile_segments(p1);
    auto base = quantile_segments(p2);
    std::vector<QSeg> lifted;
    for (int k = -1; k <= 2; ++k)
        for (const auto& s : base) lifted.push_back({s.u0 + k, s.u1 + k, s.q0 + k, s.q1 + k});
    auto cost = [&](double theta) {
        std::vector<QSeg> sh;
        for (const auto& s : lifted) {
            double a = std::max(s.u0, theta), b = std::min(s.u1, theta + 1.0);
            if (b <= a) continue;
            sh.push_back({a - theta, b - theta, s.at(a), s.at(b)});
        }
        return merged_cost(s1, sh, p, 0.0, 1.0);
    };
    // coarse scan, then golden section around the best bracket
    const int n = 64;
    double best = std::numeric_limits<double>::infinity();
    int bi = 0;
    for (int i = 0; i <= n; ++i) {
        double c = cost(-1.0 + 2.0 * i / n);
        if (c < best) {
            best = c;
            bi = i;
        }
    }
    double a = -1.0 + 2.0 * std::max(bi - 1, 0) / n, b = -1.0 + 2.0 * std::min(bi + 1, n) / n;
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - g * (b - a), x2 = a + g * (b - a), f1 = cost(x1), f2 = cost(x2);
    for (int it = 0; it < 80; ++it) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = cost(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = cost(x2);
        }
    }
    return std::min({best, f1, f2});
}

AssignmentResult solve_assignment(const std::vector<double>& cost, int n) {
    if (n < 1 || cost.size() != static_cast<std::size_t>(n) * n) throw Error("assignment needs an n x n cost");
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            int i0 = p[j0], j1 = 0;
            double delta = inf;
            const double* row = cost.data() + static_cast<std::size_t>(i0 - 1) * n;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = row[j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    AssignmentResult r{0.0, std::vector<int>(n)};
    for (int j = 1; j <= n; ++j) r.row_to_col[p[j] - 1] = j - 1;
    for (int i = 0; i < n; ++i) r.cost += cost[static_cast<std::size_t>(i) * n + r.row_to_col[i]];
    return r;
}

TransportResult solve_transport(const std::vector<double>& a, const std::vector<double>& b,
                                const std::vector<double>& cost) {
    const std::size_t n = a.size(), m = b.size();
    if (n == 0 || m == 0 || cost.size() != n * m) throw Error("transport dimensions mismatch");
    double sa = std::accumulate(a.begin(), a.end(), 0.0), sb = std::accumulate(b.begin(), b.end(), 0.0);
    if (std::fabs(sa - sb) > 1e-9 * std::max(1.0, sa)) throw Error("transport marginals have unequal mass");
    std::vector<double> supply(a), demand(b);
    for (double& v : demand) v *= sa / sb;
    const double tol = 1e-15 * std::max(1.0, sa);
    std::vector<double> flow(n * m, 0.0);
    const std::size_t V = n + m;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> pot(V, 0.0), dist(V);
    std::vector<long> prev(V);
    std::vector<char> done(V);
    for (std::size_t t = 0; t < m; ++t) {
        double mn = inf;
        for (std::size_t s = 0; s < n; ++s) mn = std::min(mn, cost[s * m + t]);
        pot[n + t] = mn;
    }
    auto remaining = [&] {
        double r = 0.0;
        for (double v : supply) r += v;
        return r;
    };
    for (std::size_t guard = 0; remaining() > tol && guard < 50 * V * V; ++guard) {
        std::fill(dist.begin(), dist.end(), inf);
        std::fill(prev.begin(), prev.end(), -1);
        std::fill(done.begin(), done.end(), 0);
        for (std::size_t s = 0; s < n; ++s)
            if (supply[s] > tol) dist[s] = 0.0;
        long target = -1;
        for (;;) {
            long u = -1;
            double best = inf;
            for (std::size_t v = 0; v < V; ++v)
                if (!done[v] && dist[v] < best) {
                    best = dist[v];
                    u = static_cast<long>(v);
                }
            if (u < 0) break;
            done[u] = 1;
            if (static_cast<std::size_t>(u) >= n && demand[u - n] > tol) {
                target = u;
                break;
            }
            if (static_cast<std::size_t>(u) < n) {
                const double* row = cost.data() + u * m;
                for (std::size_t t = 0; t < m; ++t) {
                    std::size_t v = n + t;
                    if (done[v]) continue;
                    double rc = row[t] + pot[u] - pot[v];
                    double nd = dist[u] + std::max(rc, 0.0);
                    if (nd < dist[v]) {
                        dist[v] = nd;
                        prev[v] = u;
                    }
                }
            } else {
                std::size_t t = u - n;
                for (std::size_t s = 0; s < n; ++s) {
                    if (done[s] || flow[s * m + t] <= tol) continue;
                    double rc = -cost[s * m + t] + pot[u] - pot[s];
                    double nd = dist[u] + std::max(rc, 0.0);
                    if (nd < dist[s]) {
                        dist[s] = nd;
                        prev[s] = u;
                    }
                }
            }
        }
        if (target < 0) {
            // leftover is rounding between the two marginals
            if (remaining() <= 1e-10 * std::max(1.0, sa)) break;
            throw Error("transport solver failed to find an augmenting path");
        }
        double dt = dist[target];
        for (std::size_t v = 0; v < V; ++v) pot[v] += std::min(dist[v], dt);
        // bottleneck
        double amt = demand[target - n];
        long v = target;
        while (prev[v] >= 0) {
            long u = prev[v];
            if (static_cast<std::size_t>(u) >= n) amt = std::min(amt, flow[v * m + (u - n)]);
            v = u;
        }
        amt = std::min(amt, supply[v]);
        supply[v] -= amt;
        demand[target - n] -= amt;
        v = target;
        while (prev[v] >= 0) {
            long u = prev[v];
            if (static_cast<std::size_t>(u) < n) flow[u * m + (v - n)] += amt;
            else flow[v * m + (u - n)] -= amt;
            v = u;
        }
    }
    TransportResult r{0.0, std::move(flow)};
    for (std::size_t i = 0; i < n * m; ++i) r.cost += r.plan[i] * cost[i];
    return r;
}

}  // namespace mfclab
