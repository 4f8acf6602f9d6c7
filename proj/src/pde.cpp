#include "mfclab/pde.hpp"

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>

#include "mfclab/hopflax.hpp"
#include "mfclab/metrics.hpp"
#include "mfclab/simd.hpp"

namespace mfclab {

// ---- trig functions and costs ----

double TrigFunction::operator()(double x) const {
    double s = c0;
    for (std::size_t k = 0; k < std::max(a.size(), b.size()); ++k) {
        double w = 2.0 * kPi * (k + 1) * x;
        if (k < a.size()) s += a[k] * std::cos(w);
        if (k < b.size()) s += b[k] * std::sin(w);
    }
    return s;
}

double TrigFunction::derivative(double x) const {
    double s = 0.0;
    for (std::size_t k = 0; k < std::max(a.size(), b.size()); ++k) {
        double f = 2.0 * kPi * (k + 1), w = f * x;
        if (k < a.size()) s -= f * a[k] * std::sin(w);
        if (k < b.size()) s += f * b[k] * std::cos(w);
    }
    return s;
}

double TrigFunction::max_abs() const {
    double s = std::fabs(c0);
    for (double v : a) s += std::fabs(v);
    for (double v : b) s += std::fabs(v);
    return s;
}

double TrigFunction::max_abs_deriv() const {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += 2.0 * kPi * (k + 1) * std::fabs(a[k]);
    for (std::size_t k = 0; k < b.size(); ++k) s += 2.0 * kPi * (k + 1) * std::fabs(b[k]);
    return s;
}

double TrigFunction::min_value(int samples) const {
    double m = std::numeric_limits<double>::infinity();
    for (int i = 0; i < samples; ++i) m = std::min(m, (*this)((i + 0.5) / samples));
    return m;
}

double TrigFunction::cell_average(double lo, double hi) const {
    if (hi - lo < 1e-14) return (*this)(0.5 * (lo + hi));
    double s = c0;
    for (std::size_t k = 0; k < std::max(a.size(), b.size()); ++k) {
        double f = 2.0 * kPi * (k + 1), L = f * (hi - lo);
        if (k < a.size()) s += a[k] * (std::sin(f * hi) - std::sin(f * lo)) / L;
        if (k < b.size()) s -= b[k] * (std::cos(f * hi) - std::cos(f * lo)) / L;
    }
    return s;
}

TrigFunction TrigFunction::mollified(const MollifierKernel& k) const {
    TrigFunction out = *this;
    for (std::size_t i = 0; i < out.a.size(); ++i) out.a[i] *= kernel_symbol(k, static_cast<int>(i + 1));
    for (std::size_t i = 0; i < out.b.size(); ++i) out.b[i] *= kernel_symbol(k, static_cast<int>(i + 1));
    return out;
}

bool TrigFunction::is_constant() const {
    for (double v : a)
        if (v != 0.0) return false;
    for (double v : b)
        if (v != 0.0) return false;
    return true;
}

bool CostSpec::is_zero() const {
    return lin.c0 == 0.0 && lin.is_constant() && (kappa == 0.0 || (mom.c0 == 0.0 && mom.is_constant()));
}

double CostSpec::on_config(const double* x, int N) const {
    double l = 0.0, q = 0.0;
    for (int i = 0; i < N; ++i) {
        l += lin(x[i]);
        if (kappa != 0.0) q += mom(x[i]);
    }
    l /= N;
    q /= N;
    return l + 0.5 * kappa * q * q;
}

double CostSpec::on_grid(const GridDensity& m) const {
    if (m.domain.d != 1) throw Error("costs are defined on T^1");
    double h = m.width(0), l = 0.0, q = 0.0;
    for (std::size_t j = 0; j < m.cells(); ++j) {
        if (m.masses[j] == 0.0) continue;
        l += m.masses[j] * lin.cell_average(j * h, (j + 1) * h);
        if (kappa != 0.0) q += m.masses[j] * mom.cell_average(j * h, (j + 1) * h);
    }
    return l + 0.5 * kappa * q * q;
}

double CostSpec::on_empirical(const EmpiricalMeasure& m) const {
    if (m.domain.d != 1) throw Error("costs are defined on T^1");
    double l = 0.0, q = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        l += m.weights[i] * lin(m.atoms[i]);
        if (kappa != 0.0) q += m.weights[i] * mom(m.atoms[i]);
    }
    return l + 0.5 * kappa * q * q;
}

CostSpec CostSpec::mollified(double eta) const {
    if (eta <= 0.0) return *this;
    auto k = MollifierKernel::gaussian(eta);
    return {lin.mollified(k), mom.mollified(k), kappa};
}

void ProblemData::validate() const {
    if (!(T > 0.0)) throw Error("horizon T must be positive");
    if (!(eta >= 0.0)) throw Error("eta must be >= 0");
    if (!(A0 >= 0.0)) throw Error("A0 must be >= 0");
    if (A.min_value() < -1e-12) throw Error("diffusion A(x) must be nonnegative");
}

// ---- value tensor ----

std::size_t ValueTensor::slice_size() const {
    std::size_t s = 1;
    for (int i = 0; i < N; ++i) s *= resolution;
    return s;
}

double ValueTensor::at_node(std::size_t s, const std::vector<int>& idx) const {
    std::size_t off = 0, stride = 1;
    for (int a = 0; a < N; ++a) {
        int k = ((idx[a] % resolution) + resolution) % resolution;
        off += k * stride;
        stride *= resolution;
    }
    return slice(s)[off];
}

namespace {

double interp_slice(const ValueTensor& V, std::size_t s, const double* x) {
    int N = V.N, R = V.resolution;
    std::vector<int> lo(N);
    std::vector<double> fr(N);
    for (int a = 0; a < N; ++a) {
        double u = wrap01(x[a]) * R;
        double fl = std::floor(u);
        lo[a] = static_cast<int>(fl) % R;
        fr[a] = u - fl;
    }
    double acc = 0.0;
    std::vector<int> idx(N);
    for (int corner = 0; corner < (1 << N); ++corner) {
        double w = 1.0;
        for (int a = 0; a < N; ++a) {
            bool up = corner >> a & 1;
            idx[a] = lo[a] + (up ? 1 : 0);
            w *= up ? fr[a] : 1.0 - fr[a];
        }
        if (w != 0.0) acc += w * V.at_node(s, idx);
    }
    return acc;
}

}  // namespace

double ValueTensor::interpolate(double t, const double* x) const {
    if (times.empty()) throw Error("empty value tensor");
    if (t <= times.front()) return interp_slice(*this, 0, x);
    if (t >= times.back()) return interp_slice(*this, times.size() - 1, x);
    std::size_t k = std::upper_bound(times.begin(), times.end(), t) - times.begin();
    double w = (t - times[k - 1]) / (times[k] - times[k - 1]);
    return (1.0 - w) * interp_slice(*this, k - 1, x) + w * interp_slice(*this, k, x);
}

// ---- HJB ----

namespace {

double auto_theta(const ProblemData& d) {
    CostSpec g = d.mollify_costs ? d.G.mollified(d.eta) : d.G;
    double L = g.lin.max_abs_deriv() + std::fabs(g.kappa) * g.mom.max_abs() * g.mom.max_abs_deriv();
    return 1.25 * L + 0.1;
}

std::vector<double> node_cost(const CostSpec& c, int N, int R) {
    std::size_t n = 1;
    for (int i = 0; i < N; ++i) n *= R;
    std::vector<double> lin(R), mom(R);
    for (int k = 0; k < R; ++k) {
        lin[k] = c.lin(double(k) / R);
        mom[k] = c.mom(double(k) / R);
    }
    std::vector<double> out(n);
    for (std::size_t idx = 0; idx < n; ++idx) {
        std::size_t r = idx;
        double l = 0.0, q = 0.0;
        for (int a = 0; a < N; ++a) {
            int k = r % R;
            r /= R;
            l += lin[k];
            q += mom[k];
        }
        l /= N;
        q /= N;
        out[idx] = l + 0.5 * c.kappa * q * q;
    }
    return out;
}

}  // namespace

HjbStability hjb_stability(const ProblemData& data, int N, int resolution, double theta) {
    double h = 1.0 / resolution;
    double amax = -1e300, amin = 1e300;
    for (int k = 0; k < resolution; ++k) {
        double v = data.A(double(k) / resolution);
        amax = std::max(amax, v);
        amin = std::min(amin, v);
    }
    HjbStability s;
    double center = N * (2.0 * (data.eta + amax + data.A0) / (h * h) + theta / h) -
                    N * (N - 1) * data.A0 / (h * h);
    s.dt_max = 1.0 / center;
    s.min_offdiag = (data.eta + amin + data.A0 - (N - 1) * data.A0) / (h * h);
    s.dominant = s.min_offdiag >= -1e-12;
    return s;
}

ValueTensor solve_hjb_nparticle(const ProblemData& data, int N, int R, HjbOptions opt) {
    data.validate();
    if (N < 1 || N > 3) throw Error("solve_hjb_nparticle supports 1 <= N <= 3");
    if (R < 4) throw Error("resolution must be at least 4");
    if (opt.save_slices < 2) throw Error("save_slices must be >= 2");
    const auto& K = simd::kernels();
    const double h = 1.0 / R;
    CostSpec G = data.mollify_costs ? data.G.mollified(data.eta) : data.G;
    CostSpec F = data.mollify_costs ? data.F.mollified(data.eta) : data.F;
    const auto terminal = node_cost(G, N, R);
    const bool has_F = !data.F.is_zero();
    const auto Fn = has_F ? node_cost(F, N, R) : std::vector<double>{};
    std::vector<double> diffn(R);
    for (int k = 0; k < R; ++k) diffn[k] = data.eta + data.A(double(k) / R) + data.A0;

    double theta = opt.theta > 0.0 ? opt.theta : auto_theta(data);
    for (int attempt = 0; attempt < 6; ++attempt) {
        auto st = hjb_stability(data, N, R, theta);
        if (!st.dominant)
            throw Error("cross-term stencil not monotone: need eta + min A >= (N-2) A0 (neighbour coefficient " +
                        std::to_string(st.min_offdiag) + ")");
        double dt = opt.dt > 0.0 ? opt.dt : 0.9 * st.dt_max;
        if (dt > st.dt_max * (1.0 + 1e-12))
            throw Error("CFL violation: dt = " + std::to_string(dt) + " exceeds " + std::to_string(st.dt_max));
        long steps = static_cast<long>(std::ceil(data.T / dt - 1e-9));
        dt = data.T / steps;

        std::size_t n = terminal.size(), rows = n / R;
        std::vector<double> v = terminal, out(n);
        std::vector<long> save_at;
        int S = static_cast<int>(std::min<long>(opt.save_slices, steps + 1));
        for (int j = 0; j < S; ++j) save_at.push_back(std::lround(double(j) * steps / (S - 1)));
        std::vector<std::vector<double>> saved;  // backward order
        std::vector<double> saved_t;
        std::size_t next_save = S - 1;
        // backward step index k: time T - k dt; save indexed by time step count from 0
        auto maybe_save = [&](long k) {
            long time_index = steps - k;
            while (next_save < save_at.size() && save_at[next_save] == time_index) {
                saved.push_back(v);
                saved_t.push_back(time_index * dt);
                if (next_save == 0) {
                    next_save = save_at.size();
                    break;
                }
                --next_save;
            }
        };
        maybe_save(0);

        simd::LfParams lp{dt, h, double(N), theta};
        double theta_used = 0.0, initial_pmax = 0.0;
        for (std::size_t idx = 0; idx < n; ++idx)
            for (int a = 0, st = 1; a < N; ++a, st *= R) {
                int c = (idx / st) % R;
                std::size_t base = idx - static_cast<std::size_t>(c) * st;
                double d = v[base + ((c + 1) % R) * st] - v[base + ((c + R - 1) % R) * st];
                initial_pmax = std::max(initial_pmax, N * std::fabs(d) / (2 * h));
            }
        std::vector<double> crow(R), buf(6 * R), pad_p(R), pad_m(R);
        std::vector<std::size_t> strides(N, 1);
        for (int a = 1; a < N; ++a) strides[a] = strides[a - 1] * R;
        double coef = dt * data.A0 / (h * h);
        bool broke = false;

        // start of the row whose higher coordinates are those of row r shifted by sh (sh[0] ignored)
        auto row_start = [&](std::size_t r, const int* sh) {
            std::size_t off = 0, rem = r;
            for (int a = 1; a < N; ++a) {
                int c = rem % R;
                rem /= R;
                c = ((c + sh[a]) % R + R) % R;
                off += c * strides[a];
            }
            return off;
        };
        auto shifted_row = [&](std::size_t r, const int* sh, double* tmp) -> const double* {
            const double* base = v.data() + row_start(r, sh);
            if (sh[0] == 0) return base;
            for (int i = 0; i < R; ++i) tmp[i] = base[((i + sh[0]) % R + R) % R];
            return tmp;
        };

        // dissipation follows the observed gradient range; theta caps it for the CFL bound
        // physical diffusion left after the cross terms covers |p| <= 2 eff / h without any dissipation
        double amin = 1e300;
        for (int k2 = 0; k2 < R; ++k2) amin = std::min(amin, data.A(double(k2) / R));
        const double slack = 2.0 * (data.eta + amin + data.A0 - (N - 1) * data.A0) / h;
        auto needed = [&](double p) { return std::max(0.0, 1.05 * p + 1e-3 - slack); };
        auto violated = [&](double p, double th) { return p - slack > th * (1.0 + 1e-12) + 1e-15; };
        double theta_step = std::min(theta, needed(initial_pmax));
        auto do_step = [&](double th) {
            lp.theta = th;
            out = v;
            double pmax = 0.0;
                for (std::size_t r = 0; r < rows; ++r) {
                    double* o = out.data() + r * R;
                    const double* vr = v.data() + r * R;
                    for (int a = 0; a < N; ++a) {
                        int sp[3] = {0, 0, 0}, sm[3] = {0, 0, 0};
                        sp[a] = 1;
                        sm[a] = -1;
                        const double* vp = shifted_row(r, sp, pad_p.data());
                        const double* vm = shifted_row(r, sm, pad_m.data());
                        const double* diff = diffn.data();
                        if (a > 0) {
                            std::size_t rem = r;
                            for (int b = 1; b < a; ++b) rem /= R;
                            std::fill(crow.begin(), crow.end(), diffn[rem % R]);
                            diff = crow.data();
                        }
                        pmax = std::max(pmax, K.lf_axis(o, vr, vp, vm, diff, R, lp));
                    }
                    if (data.A0 > 0.0)
                        for (int a = 0; a < N; ++a)
                            for (int b = a + 1; b < N; ++b) {
                                int s_pp[3] = {0, 0, 0}, s_mm[3] = {0, 0, 0}, s_pa[3] = {0, 0, 0}, s_ma[3] = {0, 0, 0},
                                    s_pb[3] = {0, 0, 0}, s_mb[3] = {0, 0, 0};
                                s_pp[a] = s_pp[b] = 1;
                                s_mm[a] = s_mm[b] = -1;
                                s_pa[a] = 1;
                                s_ma[a] = -1;
                                s_pb[b] = 1;
                                s_mb[b] = -1;
                                K.cross(o, vr, shifted_row(r, s_pp, buf.data()), shifted_row(r, s_mm, buf.data() + R),
                                        shifted_row(r, s_pa, buf.data() + 2 * R), shifted_row(r, s_ma, buf.data() + 3 * R),
                                        shifted_row(r, s_pb, buf.data() + 4 * R), shifted_row(r, s_mb, buf.data() + 5 * R),
                                        coef, R);
                            }
                    if (has_F)
                        for (int i = 0; i < R; ++i) o[i] += dt * Fn[r * R + i];
                }
            return pmax;
        };
        for (long k = 1; k <= steps && !broke; ++k) {
            double pmax = do_step(theta_step);
            if (violated(pmax, theta_step)) {
                if (needed(pmax) > theta) {
                    if (opt.theta > 0.0)
                        throw Error("Lax-Friedrichs constant too small: observed |p| = " + std::to_string(pmax));
                    theta = 1.5 * pmax;
                    broke = true;
                    break;
                }
                theta_step = needed(pmax);
                double again = do_step(theta_step);
                if (violated(again, theta_step)) throw Error("Lax-Friedrichs step failed to stabilise");
            }
            theta_used = std::max(theta_used, theta_step);
            theta_step = std::min(theta, needed(pmax));
            v.swap(out);
            maybe_save(k);
        }
        if (broke) continue;
        ValueTensor V;
        V.N = N;
        V.resolution = R;
        V.dt = dt;
        V.theta = theta_used;
        for (std::size_t i = saved.size(); i-- > 0;) {
            V.times.push_back(saved_t[i]);
            V.values.insert(V.values.end(), saved[i].begin(), saved[i].end());
        }
        return V;
    }
    throw Error("Lax-Friedrichs constant did not stabilise");
}

GradientProbe hjb_gradient_probe(const ValueTensor& V) {
    GradientProbe g;
    int N = V.N, R = V.resolution;
    double h = V.h();
    std::size_t n = V.slice_size();
    std::vector<std::size_t> strides(N, 1);
    for (int a = 1; a < N; ++a) strides[a] = strides[a - 1] * R;
    for (std::size_t s = 0; s < V.times.size(); ++s) {
        const double* v = V.slice(s);
        for (std::size_t idx = 0; idx < n; ++idx)
            for (int a = 0; a < N; ++a) {
                int c = (idx / strides[a]) % R;
                std::size_t base = idx - c * strides[a];
                double vp = v[base + ((c + 1) % R) * strides[a]], vm = v[base + ((c + R - 1) % R) * strides[a]];
                g.grad = std::max(g.grad, std::fabs(vp - vm) / (2 * h));
                g.hess = std::max(g.hess, std::fabs(vp - 2 * v[idx] + vm) / (h * h));
            }
    }
    return g;
}

HolderCheck time_holder_check(const ValueTensor& V) {
    HolderCheck hc;
    std::size_t S = V.times.size(), n = V.slice_size();
    if (S < 3) throw Error("time_holder_check needs at least 3 slices");
    for (std::size_t g = 1; g < S; g *= 2) {
        double c = 0.0;
        for (std::size_t s = 0; s + g < S; ++s) {
            double gap = V.times[s + g] - V.times[s], m = 0.0;
            const double* a = V.slice(s);
            const double* b = V.slice(s + g);
            for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::fabs(a[i] - b[i]));
            c = std::max(c, m / std::sqrt(gap));
        }
        hc.rows.push_back({V.times[g] - V.times[0], c});
        hc.constant = std::max(hc.constant, c);
    }
    hc.stable = hc.rows.front().second <= 2.0 * hc.rows.back().second + 1e-12;
    return hc;
}

std::vector<double> inviscid_oracle(const ProblemData& data, int N, int R, double t) {
    if (!(data.A.max_abs() == 0.0) || data.A0 != 0.0 || !data.F.is_zero())
        throw Error("no exact eta = 0 oracle: need A = 0, A0 = 0, F = 0");
    if (!(t < data.T)) throw Error("oracle needs t < T");
    double tau = data.T - t;
    const CostSpec& G = data.G;
    auto cost = TerminalCost::custom(
        1, [&](const Measure& m) { return G.on_empirical(std::get<EmpiricalMeasure>(m)); });
    std::size_t n = 1;
    for (int i = 0; i < N; ++i) n *= R;
    std::vector<double> out(n);
    double L = G.lin.max_abs_deriv() + std::fabs(G.kappa) * G.mom.max_abs() * G.mom.max_abs_deriv();
    parallel_for(n, [&](std::size_t idx) {
        std::vector<double> x(N);
        std::size_t r = idx;
        for (int a = 0; a < N; ++a) {
            x[a] = double(r % R) / R;
            r /= R;
        }
        double best = vN_deterministic(0.0, x, cost, tau).value;
        if (N == 1) {
            // global scan over y, then golden refinement
            double span = tau * L + 0.02, x0 = x[0];
            auto f = [&](double y) { return G.lin(y) + 0.5 * G.kappa * G.mom(y) * G.mom(y) + (y - x0) * (y - x0) / (2 * tau); };
            const int M = 4096;
            double by = x0, bv = f(x0);
            for (int k = 0; k <= M; ++k) {
                double y = x0 - span + 2 * span * k / M, fv = f(y);
                if (fv < bv) bv = fv, by = y;
            }
            double a = by - 2 * span / M, b = by + 2 * span / M, g = (std::sqrt(5.0) - 1) / 2;
            for (int it = 0; it < 100; ++it) {
                double c = b - g * (b - a), d = a + g * (b - a);
                if (f(c) < f(d)) b = d;
                else a = c;
            }
            best = std::min({best, bv, f(0.5 * (a + b))});
        }
        out[idx] = best;
    });
    return out;
}

RateTable viscosity_rate_probe(const ProblemData& data, int N, const std::vector<double>& etas, int resolution) {
    ProblemData d0 = data;
    d0.eta = 0.0;
    auto oracle = inviscid_oracle(d0, N, resolution, 0.0);
    RateTable tab;
    for (double eta : etas) {
        if (!(eta > 0.0)) throw Error("viscosity_rate_probe needs eta > 0");
        ProblemData d = data;
        d.eta = eta;
        auto V = solve_hjb_nparticle(d, N, resolution);
        const double* v0 = V.slice(0);
        double m = 0.0;
        for (std::size_t i = 0; i < oracle.size(); ++i) m = std::max(m, std::fabs(v0[i] - oracle[i]));
        tab.rows.push_back({eta, m, 0.0});
    }
    std::sort(tab.rows.begin(), tab.rows.end(), [](const RateRow& a, const RateRow& b) { return a.param < b.param; });
    if (tab.rows.size() >= 3) fit_in_place(tab);
    return tab;
}

// ---- common noise and feedback controls ----

CommonNoisePath CommonNoisePath::sample(double t0, double T, int steps, double sigma0, std::uint64_t seed) {
    if (steps < 1 || !(T > t0)) throw Error("path needs steps >= 1 and T > t0");
    CommonNoisePath p;
    p.t0 = t0;
    p.dt = (T - t0) / steps;
    p.sigma0 = sigma0;
    p.W.assign(steps + 1, 0.0);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int k = 0; k < steps; ++k) p.W[k + 1] = p.W[k] + std::sqrt(p.dt) * nd(rng);
    return p;
}

CommonNoisePath CommonNoisePath::zero(double t0, double T, int steps) {
    auto p = sample(t0, T, steps, 0.0, 1);
    std::fill(p.W.begin(), p.W.end(), 0.0);
    return p;
}

double CommonNoisePath::shift(double t) const {
    double u = (t - t0) / dt;
    if (u <= 0.0) return 0.0;
    int n = steps();
    if (u >= n) return sigma0 * W[n];
    int k = static_cast<int>(u);
    double f = u - k;
    return sigma0 * ((1.0 - f) * W[k] + f * W[k + 1]);
}

FeedbackControl FeedbackControl::zero(double t0, double T, int slabs, int space, double bound) {
    if (slabs < 1 || space < 1 || !(T > t0) || !(bound > 0.0)) throw Error("invalid feedback control layout");
    FeedbackControl c;
    c.t0 = t0;
    c.T = T;
    c.slabs = slabs;
    c.space = space;
    c.bound = bound;
    c.values.assign(static_cast<std::size_t>(slabs) * space, 0.0);
    return c;
}

double FeedbackControl::operator()(double t, double x) const {
    int s = static_cast<int>(std::floor((t - t0) / (T - t0) * slabs));
    s = std::clamp(s, 0, slabs - 1);
    double u = wrap01(x) * space;
    int j = static_cast<int>(std::floor(u)) % space;
    double f = u - std::floor(u);
    const double* row = values.data() + static_cast<std::size_t>(s) * space;
    return (1.0 - f) * row[j] + f * row[(j + 1) % space];
}

void FeedbackControl::clip() {
    for (double& v : values) v = std::clamp(v, -bound, bound);
}

// ---- Fokker-Planck with common noise ----

namespace {

// one step of the shifted equation: donor-cell drift, then implicit diffusion of (D m)''
class FpStepper {
public:
    explicit FpStepper(int R) : R_(R), h_(1.0 / R), tmp_(R) {}

    void step(std::vector<double>& m, const std::vector<double>& b, const std::vector<double>& D, double dt) {
        simd::kernels().donor_cell(tmp_.data(), m.data(), b.data(), R_, dt / h_);
        bool any = false;
        for (double v : D) any = any || v > 0.0;
        if (!any) {
            m = tmp_;
            return;
        }
        if (D != lastD_ || dt != lastdt_) factor(D, dt);
        Eigen::Map<Eigen::VectorXd> rhs(tmp_.data(), R_);
        Eigen::VectorXd sol = lu_.solve(rhs);
        for (int i = 0; i < R_; ++i) m[i] = sol[i];
    }

private:
    void factor(const std::vector<double>& D, double dt) {
        std::vector<Eigen::Triplet<double>> tr;
        double c = dt / (h_ * h_);
        for (int i = 0; i < R_; ++i) {
            int l = (i + R_ - 1) % R_, r = (i + 1) % R_;
            tr.emplace_back(i, i, 1.0 + 2.0 * c * D[i]);
            tr.emplace_back(i, l, -c * D[l]);
            tr.emplace_back(i, r, -c * D[r]);
        }
        Eigen::SparseMatrix<double> M(R_, R_);
        M.setFromTriplets(tr.begin(), tr.end());
        lu_.compute(M);
        if (lu_.info() != Eigen::Success) throw Error("implicit diffusion factorisation failed");
        lastD_ = D;
        lastdt_ = dt;
    }

    int R_;
    double h_;
    std::vector<double> tmp_, lastD_;
    double lastdt_ = -1.0;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu_;
};

void check_fp_inputs(const GridDensity& m0, const CommonNoisePath& path) {
    if (m0.domain.kind != DomainKind::torus || m0.domain.d != 1) throw Error("FP solver needs a density on T^1");
    if (path.steps() < 1) throw Error("empty common-noise path");
}

int auto_substeps(const CommonNoisePath& path, double amax, int R) {
    double h = 1.0 / R;
    if (amax <= 0.0) return 1;
    return std::max(1, static_cast<int>(std::ceil(path.dt * amax / (0.9 * h))));
}

void check_mass(const std::vector<double>& m) {
    double mn = *std::min_element(m.begin(), m.end());
    if (mn < -1e-12) throw Error("negative cell mass " + std::to_string(mn) + " in FP step");
}

// visits (time, shift, mbar) after every fine step, and once at the start
template <class Visit>
void run_fp(const std::function<double(double, double)>& alpha, double amax, const ProblemData& data,
            const GridDensity& m0, const CommonNoisePath& path, int substeps, Visit&& visit) {
    int R = m0.resolution[0];
    double h = 1.0 / R;
    int sub = substeps > 0 ? substeps : auto_substeps(path, amax, R);
    double dt = path.dt / sub;
    if (dt * amax > h * (1.0 + 1e-12)) throw Error("CFL violation in FP drift: dt max|alpha| > h");
    std::vector<double> m = m0.masses, b(R), D(R);
    FpStepper st(R);
    long total = static_cast<long>(path.steps()) * sub;
    visit(0L, path.t0, 0.0, m);
    for (long k = 0; k < total; ++k) {
        double t = path.t0 + k * dt, z = path.shift(t);
        for (int i = 0; i < R; ++i) {
            double x = (i + 0.5) * h + z;
            b[i] = alpha(t, x);
            D[i] = data.eta + data.A(x);
        }
        st.step(m, b, D, dt);
        check_mass(m);
        double tn = path.t0 + (k + 1) * dt;
        visit(k + 1, tn, path.shift(tn), m);
    }
}

GridDensity with_masses(const GridDensity& like, const std::vector<double>& m) {
    GridDensity g = like;
    g.masses = m;
    return g;
}

double control_amax(const FeedbackControl& c) {
    double a = 0.0;
    for (double v : c.values) a = std::max(a, std::fabs(v));
    return a;
}

}  // namespace

FpResult solve_fp_common_noise(const FeedbackControl& control, const ProblemData& data, const GridDensity& m0,
                               const CommonNoisePath& path, FpOptions opt) {
    data.validate();
    check_fp_inputs(m0, path);
    if (opt.save_every < 1) throw Error("save_every must be >= 1");
    FpResult res;
    auto alpha = [&](double t, double x) { return control(t, x); };
    run_fp(alpha, control_amax(control), data, m0, path, opt.substeps,
           [&](long k, double t, double z, const std::vector<double>& m) {
               if (k % opt.save_every) return;
               res.times.push_back(t);
               res.slices.push_back(translate(with_masses(m0, m), std::vector<double>{z}));
           });
    return res;
}

double tv_contraction_probe(const GridDensity& m0, const GridDensity& m0p, const FeedbackControl& control,
                            const ProblemData& data, const CommonNoisePath& path) {
    if (m0.resolution != m0p.resolution) throw Error("initial densities must share a grid");
    auto a = solve_fp_common_noise(control, data, m0, path);
    auto b = solve_fp_common_noise(control, data, m0p, path);
    double tv0 = tv_distance(m0, m0p);
    if (tv0 == 0.0) return 0.0;
    double worst = 0.0;
    for (std::size_t k = 0; k < a.slices.size(); ++k) worst = std::max(worst, tv_distance(a.slices[k], b.slices[k]) / tv0);
    return worst;
}

namespace {

std::vector<double> circ_convolve(const std::vector<double>& m, const std::vector<double>& w) {
    int n = static_cast<int>(m.size());
    std::vector<double> out(n, 0.0);
    for (int j = 0; j < n; ++j) {
        if (w[j] == 0.0) continue;
        for (int i = 0; i < n; ++i) out[(i + j) % n] += w[j] * m[i];
    }
    return out;
}

std::vector<double> coarsen(const std::vector<double>& m, int factor) {
    std::vector<double> out(m.size() / factor, 0.0);
    for (std::size_t i = 0; i < m.size(); ++i) out[i / factor] += m[i];
    return out;
}

}  // namespace

CommutatorResult commutator_probe(const TrigFunction& alpha0, double delta, const ProblemData& data,
                                  const CommonNoisePath& path, double horizon, const GridDensity& m0) {
    data.validate();
    check_fp_inputs(m0, path);
    int R = m0.resolution[0];
    double h = 1.0 / R, floor_mass = *std::min_element(m0.masses.begin(), m0.masses.end()) * R;
    if (!(floor_mass > 0.0)) throw Error("commutator probe needs m0 >= c Leb with c > 0");
    auto kern = MollifierKernel::gaussian(delta);
    if (h > delta / 4.0 + 1e-15) throw Error("resolution too coarse relative to delta (cell width must be <= delta/4)");
    auto w = kernel_cell_weights(kern, R);
    double amax = alpha0.max_abs();
    int sub = auto_substeps(path, amax, R);
    double dt = path.dt / sub;
    long total = std::min<long>(static_cast<long>(path.steps()) * sub, static_cast<long>(std::ceil(horizon / dt - 1e-9)));

    std::vector<double> m = m0.masses, md = circ_convolve(m0.masses, w), b(R), bd(R), D(R);
    FpStepper sa(R), sb(R);
    CommutatorResult res;
    GridDensity ga = m0, gb = m0;
    for (long k = 0; k < total; ++k) {
        double t = path.t0 + k * dt, z = path.shift(t);
        for (int i = 0; i < R; ++i) {
            double x = (i + 0.5) * h + z;
            b[i] = alpha0(x);
            D[i] = data.eta + data.A(x);
        }
        // alpha^delta = rho*(alpha m) / rho*m in the shifted frame
        std::vector<double> am(R);
        for (int i = 0; i < R; ++i) am[i] = b[i] * m[i];
        auto num = circ_convolve(am, w), den = circ_convolve(m, w);
        for (int i = 0; i < R; ++i) bd[i] = den[i] > 0.0 ? num[i] / den[i] : 0.0;
        sa.step(m, b, D, dt);
        sb.step(md, bd, D, dt);
        check_mass(m);
        check_mass(md);
        ga.masses = circ_convolve(m, w);
        gb.masses = md;
        double el = (k + 1) * dt;
        res.probe = std::max(res.probe, sobolev_dual_norm(gb, ga, 3) / el);
    }
    // reference scale: the same flow at 2R, coarsened
    {
        auto fine0 = refine_grid(m0, 2);
        std::vector<double> mf = fine0.masses, mc = m0.masses, bf(2 * R), Df(2 * R);
        FpStepper sf(2 * R), sc(R);
        int subf = 2 * sub;
        double dtf = path.dt / subf;
        GridDensity gc = m0, gf = m0;
        for (long k = 0; k < total; ++k) {
            double t = path.t0 + k * dt, z = path.shift(t);
            for (int i = 0; i < R; ++i) {
                double x = (i + 0.5) * h + z;
                b[i] = alpha0(x);
                D[i] = data.eta + data.A(x);
            }
            sc.step(mc, b, D, dt);
            for (int r = 0; r < 2; ++r) {
                double tf = t + r * dtf, zf = path.shift(tf);
                for (int i = 0; i < 2 * R; ++i) {
                    double x = (i + 0.5) * h / 2 + zf;
                    bf[i] = alpha0(x);
                    Df[i] = data.eta + data.A(x);
                }
                sf.step(mf, bf, Df, dtf);
            }
            gc.masses = mc;
            gf.masses = coarsen(mf, 2);
            res.scheme_error = std::max(res.scheme_error, sobolev_dual_norm(gc, gf, 3) / ((k + 1) * dt));
        }
    }
    return res;
}

McEstimate integrated_value_mc(const ValueTensor& V, const Measure& m, double t, int samples, std::uint64_t seed) {
    if (samples < 100) throw Error("integrated_value_mc needs samples >= 100");
    if (domain_of(m).d != 1) throw Error("integrated_value_mc needs a measure on T^1");
    auto pts = sample_iid(m, static_cast<std::size_t>(samples) * V.N, seed);
    std::vector<double> v(samples);
    for (int k = 0; k < samples; ++k) v[k] = V.interpolate(t, pts.data() + static_cast<std::size_t>(k) * V.N);
    McEstimate e;
    double shift = 0.0;
    for (double x : v) shift += (x - v[0]) / samples;
    e.estimate = v[0] + shift;
    double ss = 0.0;
    for (double x : v) ss += (x - e.estimate) * (x - e.estimate);
    e.stderr_ = std::sqrt(ss / (samples - 1.0) / samples);
    return e;
}

double feedback_cost(const FeedbackControl& c, const ProblemData& data, const GridDensity& m0,
                     const std::vector<CommonNoisePath>& paths, double* stderr_out) {
    data.validate();
    if (paths.empty()) throw Error("feedback_cost needs at least one path");
    CostSpec F = data.mollify_costs ? data.F.mollified(data.eta) : data.F;
    CostSpec G = data.mollify_costs ? data.G.mollified(data.eta) : data.G;
    bool has_F = !F.is_zero();
    std::vector<double> per(paths.size());
    parallel_for(paths.size(), [&](std::size_t p) {
        const auto& path = paths[p];
        int R = m0.resolution[0];
        double h = 1.0 / R, run = 0.0, last_t = path.t0, final_cost = 0.0;
        std::vector<double> prev = m0.masses;
        double prev_z = 0.0;
        auto alpha = [&](double t, double x) { return c(t, x); };
        run_fp(alpha, control_amax(c), data, m0, path, 0, [&](long k, double t, double z, const std::vector<double>& m) {
            if (k > 0) {
                // left-point rule on the previous state
                double dtl = t - last_t, lag = 0.0;
                for (int i = 0; i < R; ++i) {
                    double a = c(last_t, (i + 0.5) * h + prev_z);
                    lag += prev[i] * 0.5 * a * a;
                }
                run += dtl * lag;
                if (has_F) run += dtl * F.on_grid(translate(with_masses(m0, prev), std::vector<double>{prev_z}));
            }
            prev = m;
            prev_z = z;
            last_t = t;
            final_cost = G.on_grid(translate(with_masses(m0, m), std::vector<double>{z}));
        });
        per[p] = run + final_cost;
    });
    double mean = std::accumulate(per.begin(), per.end(), 0.0) / per.size();
    if (stderr_out) {
        double v = 0.0;
        for (double x : per) v += (x - mean) * (x - mean);
        *stderr_out = per.size() > 1 ? std::sqrt(v / (per.size() - 1) / per.size()) : 0.0;
    }
    return mean;
}

FeedbackSearch feedback_value_search(const ProblemData& data, const GridDensity& m0, int slabs, int space, int iters,
                                     std::uint64_t seed, int npaths) {
    data.validate();
    if (!(data.eta > 0.0)) throw Error("feedback_value_search needs eta > 0");
    if (npaths < 1 || iters < 0) throw Error("feedback_value_search needs paths >= 1 and iters >= 0");
    const CostSpec& G = data.G;
    double LG = G.lin.max_abs_deriv() + std::fabs(G.kappa) * G.mom.max_abs() * G.mom.max_abs_deriv();
    double sigma0 = std::sqrt(2.0 * data.A0);
    std::vector<CommonNoisePath> paths;
    for (int p = 0; p < npaths; ++p)
        paths.push_back(CommonNoisePath::sample(0.0, data.T, 32, sigma0, derive_seed(seed, "path/" + std::to_string(p))));
    FeedbackSearch out;
    out.control = FeedbackControl::zero(0.0, data.T, slabs, space, 2.0 * LG + 1.0);
    double se = 0.0;
    double J = feedback_cost(out.control, data, m0, paths, &se);
    out.history.push_back(J);
    std::mt19937_64 rng(derive_seed(seed, "spsa"));
    std::bernoulli_distribution coin(0.5);
    double step = 0.25 * out.control.bound;
    std::size_t P = out.control.values.size();
    for (int it = 0; it < iters; ++it) {
        double ck = 0.05 * out.control.bound / std::pow(it + 1.0, 0.101);
        std::vector<double> delta(P);
        for (double& d : delta) d = coin(rng) ? 1.0 : -1.0;
        auto plus = out.control, minus = out.control;
        for (std::size_t i = 0; i < P; ++i) {
            plus.values[i] += ck * delta[i];
            minus.values[i] -= ck * delta[i];
        }
        plus.clip();
        minus.clip();
        double g = (feedback_cost(plus, data, m0, paths) - feedback_cost(minus, data, m0, paths)) / (2.0 * ck);
        bool accepted = false;
        for (int bt = 0; bt < 4 && g != 0.0; ++bt) {
            auto cand = out.control;
            double sg = g > 0.0 ? 1.0 : -1.0;
            for (std::size_t i = 0; i < P; ++i) cand.values[i] -= step * sg * delta[i];
            cand.clip();
            double cse = 0.0, Jc = feedback_cost(cand, data, m0, paths, &cse);
            if (Jc < J) {
                out.control = cand;
                J = Jc;
                se = cse;
                step *= 1.5;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) step = std::max(step, 1e-4 * out.control.bound);
        out.history.push_back(J);
    }
    out.value = J;
    out.stderr_ = se;
    return out;
}

SelfConvergence hjb_self_convergence(const ProblemData& data, int N, int R) {
    // dt proportional to h^2 on all three grids so the time error does not mix orders
    double theta = auto_theta(data), c = 1e300;
    for (int f : {1, 2, 4}) {
        double hh = 1.0 / (f * R);
        c = std::min(c, 0.9 * hjb_stability(data, N, f * R, theta).dt_max / (hh * hh));
    }
    auto solve = [&](int f) {
        HjbOptions o;
        o.dt = c / double(f * R) / double(f * R);
        return solve_hjb_nparticle(data, N, f * R, o);
    };
    auto V1 = solve(1), V2 = solve(2), V4 = solve(4);
    SelfConvergence sc;
    std::size_t n = V1.slice_size();
    std::vector<int> idx(N), i2(N), i4(N);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t r = k;
        for (int a = 0; a < N; ++a) {
            idx[a] = r % R;
            r /= R;
            i2[a] = 2 * idx[a];
            i4[a] = 4 * idx[a];
        }
        double a1 = V1.at_node(0, idx), a2 = V2.at_node(0, i2), a4 = V4.at_node(0, i4);
        sc.e1 = std::max(sc.e1, std::fabs(a1 - a2));
        sc.e2 = std::max(sc.e2, std::fabs(a2 - a4));
    }
    sc.order = std::log2(sc.e1 / sc.e2);
    return sc;
}

SelfConvergence fp_self_convergence(const FeedbackControl& control, const ProblemData& data, const GridDensity& m0,
                                    const CommonNoisePath& path) {
    int R = m0.resolution[0];
    auto f1 = solve_fp_common_noise(control, data, m0, path).slices.back();
    auto f2 = solve_fp_common_noise(control, data, refine_grid(m0, 2), path).slices.back();
    auto f4 = solve_fp_common_noise(control, data, refine_grid(m0, 4), path).slices.back();
    auto c2 = coarsen(f2.masses, 2), c4 = coarsen(f4.masses, 4);
    SelfConvergence sc;
    for (int i = 0; i < R; ++i) {
        sc.e1 += std::fabs(f1.masses[i] - c2[i]);
        sc.e2 += std::fabs(c2[i] - c4[i]);
    }
    sc.order = std::log2(sc.e1 / sc.e2);
    return sc;
}

}  // namespace mfclab
