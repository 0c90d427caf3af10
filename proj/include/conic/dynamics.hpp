#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "conic/fit.hpp"
#include "conic/quadrature.hpp"
#include "conic/spectral.hpp"

namespace conic {

// ---------------------------------------------------------------------------
// Linear propagator

// e^{-itP} by eigenphases. With enforce set, the light-cone rule of the box is checked for |t|.
inline FieldState propagate(const FieldState& s, double t, bool enforce = true)
{
    if (enforce) enforce_light_cone(s, t);
    FieldState out = apply_spectral_function(s, [t](double lam) { return std::polar(1.0, -t * lam); });
    out.t = s.t + t;
    return out;
}

inline FieldState conjugate(const FieldState& s)
{
    FieldState out = s;
    for (auto& v : out.coeffs)
        for (auto& x : v) x = std::conj(x);
    return out;
}

inline FieldState scaled(const FieldState& s, double a)
{
    FieldState out = s;
    for (auto& v : out.coeffs)
        for (auto& x : v) x *= a;
    return out;
}

// Free Gaussian e^{-r^2/(2 w^2)} evolved by e^{-i t0 P}; t0 < 0 gives data that refocuses at t = -t0.
inline FieldState gaussian_state(std::shared_ptr<const ModeBasis> b, double width, double t0 = 0)
{
    auto g = radial_state(std::move(b), [width](double r) { return cplx(std::exp(-0.5 * r * r / (width * width))); });
    if (t0 != 0) g = propagate(g, t0, false);
    g.t = 0;
    return g;
}

// ---------------------------------------------------------------------------
// Dispersive decay

enum class CutoffMode { exterior, none };

struct DispersiveSample {
    double t = 0;
    double sup = 0;
    double ratio = 0; // sup / ||u0||_1
    bool cone_ok = true;
};

struct DispersiveFitReport {
    DecayFit fit;
    std::vector<DispersiveSample> samples;
    double l1 = 0;
    double decades = 0;
    bool window_short = false;
    bool pass = false;
    double target = 0;
};

// Band-localized data: the exterior cutoff (1 - chi)(eps r), chi = f0(x / chi_radius), applied to a
// Gaussian of width `width / eps` and then f(P/eps^2). Projecting last keeps the spectrum inside the
// band; the cutoff order is swapped because a cutoff applied last has slowly decaying spectral tails.
inline FieldState band_data(std::shared_ptr<const ModeBasis> b, const DyadicBand& band, CutoffMode mode, double width = 2,
                            double chi_radius = 1)
{
    const double eps = band.scale();
    auto w = gaussian_state(b, width / eps);
    if (mode == CutoffMode::exterior) w = multiply_radial(w, [&](double r) { return 1 - lp_f0(eps * r / chi_radius); });
    return apply_band(w, band);
}

// sup_x |u(t)| / ||u0||_1 along a time ladder; the fit uses the samples inside the light cone.
inline DispersiveFitReport dispersive_fit(const FieldState& u0, const std::vector<double>& t_ladder, double slack = 0.2)
{
    DispersiveFitReport rep;
    const int n = u0.n();
    rep.target = -0.5 * n;
    rep.l1 = lq_norm(u0, 1);
    std::vector<std::pair<double, double>> pts;
    for (double t : t_ladder) {
        DispersiveSample s;
        s.t = t;
        s.cone_ok = light_cone(u0, t).ok;
        if (s.cone_ok) {
            s.sup = lq_norm(propagate(u0, t, false), INFINITY);
            s.ratio = s.sup / rep.l1;
            pts.emplace_back(t, s.sup);
        }
        rep.samples.push_back(s);
    }
    if (pts.size() >= 2) {
        rep.decades = std::log10(pts.back().first / pts.front().first);
        rep.fit = power_fit(pts);
    }
    rep.window_short = rep.decades < 1;
    rep.pass = !rep.window_short && rep.fit.exponent <= rep.target + slack;
    return rep;
}

// ---------------------------------------------------------------------------
// Strichartz

inline double admissibility_residual(double p, double q, int n)
{
    const double ip = std::isinf(p) ? 0 : 1 / p;
    return 2 * ip + n / q - 0.5 * n;
}

inline void check_admissible(double p, double q, int n)
{
    const double res = admissibility_residual(p, q, n);
    if (!(p >= 2) || !(q >= 2) || std::abs(res) > 1e-12) {
        std::ostringstream m;
        m << "strichartz: pair (" << p << ", " << q << ") is not admissible for n = " << n << ": 2/p + n/q - n/2 = " << res;
        throw std::invalid_argument(m.str());
    }
}

struct StrichartzBand {
    int index = 0;
    double scale = 0;
    double T = 0;
    double ratio = 0;      // ||u||_{L^p([0,T]; L^q)} / ||u0||_2
    double ratio_half = 0; // same over [0, T/2]
    double increment = 0;
    LightCone cone;
};

struct StrichartzReport {
    double p = 0, q = 0;
    double admissibility = 0;
    std::vector<StrichartzBand> bands;
    double spread = 0;
    double max_increment = 0;
};

// Grid for band j scales with 1/eps so every band sees the same number of wavelengths.
struct StrichartzConfig {
    WarpedMetric metric = flat_warped(3);
    double p = 2, q = 6;
    std::vector<int> bands{0, 1, 2, 3, 4, 5, 6, 7, 8};
    double R0 = 200;       // R_max = R0 / eps
    double dr0 = 0.2;      // dr = dr0 / eps
    double width = 1;      // Gaussian width / eps before the band projection
    int panels = 10;
    std::size_t order = 16;
    std::string cache_dir;
};

// Cumulative time integral of ||u(t)||_q^p over dyadic panels ending at T (p finite), or running
// maxima (p infinite). Entries are the values at T / 2^{panels - 1 - k}.
inline std::vector<double> lq_time_profile(const FieldState& u0, double p, double q, double T, int panels = 10, std::size_t order = 16)
{
    std::vector<double> edges{0.0};
    for (int k = panels - 1; k >= 0; --k) edges.push_back(T / std::pow(2.0, k));
    const Rule ref = gauss_legendre(order);
    std::vector<double> times, wts;
    std::vector<int> panel_of;
    for (std::size_t k = 0; k + 1 < edges.size(); ++k)
        for (std::size_t j = 0; j < order; ++j) {
            const double a = edges[k], c = edges[k + 1];
            times.push_back(0.5 * (a + c) + 0.5 * (c - a) * ref.x[j]);
            wts.push_back(0.5 * (c - a) * ref.w[j]);
            panel_of.push_back(static_cast<int>(k));
        }
    if (std::isinf(p)) {
        times.insert(times.begin(), 0.0);
        wts.insert(wts.begin(), 0.0);
        panel_of.insert(panel_of.begin(), 0);
    }
    const std::size_t m = times.size();
    const auto& b = *u0.basis;
    // per-time states, assembled mode by mode with batched synthesis
    std::vector<FieldState> states(m, zero_state(u0.basis));
    for (std::size_t l = 0; l < u0.coeffs.size(); ++l) {
        const auto& op = b.ops[l];
        const auto c = to_eigen(op, u0.coeffs[l]);
        const std::size_t M = op.modes(), N = op.size();
        std::vector<cplx> C(M * m);
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t k = 0; k < M; ++k) C[k + j * M] = c[k] * std::polar(1.0, -times[j] * op.lambda[k]);
        const auto V = from_eigen_batch(op, C, m);
        for (std::size_t j = 0; j < m; ++j) std::copy(V.begin() + j * N, V.begin() + (j + 1) * N, states[j].coeffs[l].begin());
    }
    std::vector<double> norms(m);
    parallel_for(m, [&](std::size_t j) { norms[j] = lq_norm(states[j], q); });
    std::vector<double> out(edges.size() - 1, 0.0);
    if (std::isinf(p)) {
        for (std::size_t j = 0; j < m; ++j) out[panel_of[j]] = std::max(out[panel_of[j]], norms[j]);
        for (std::size_t k = 1; k < out.size(); ++k) out[k] = std::max(out[k], out[k - 1]);
        return out;
    }
    for (std::size_t j = 0; j < m; ++j) out[panel_of[j]] += wts[j] * std::pow(norms[j], p);
    for (std::size_t k = 1; k < out.size(); ++k) out[k] += out[k - 1];
    for (auto& x : out) x = std::pow(x, 1 / p);
    return out;
}

inline StrichartzReport strichartz_experiment(const StrichartzConfig& cfg)
{
    const int n = cfg.metric.n;
    check_admissible(cfg.p, cfg.q, n);
    StrichartzReport rep;
    rep.p = cfg.p;
    rep.q = cfg.q;
    rep.admissibility = admissibility_residual(cfg.p, cfg.q, n);
    rep.bands.resize(cfg.bands.size());
    for (std::size_t i = 0; i < cfg.bands.size(); ++i) {
        const DyadicBand band{cfg.bands[i], LpDirection::low};
        const double eps = band.scale();
        auto b = build_mode_basis(cfg.metric, 0, cfg.R0 / eps, cfg.dr0 / eps, cfg.cache_dir);
        FieldState u0 = band_data(b, band, CutoffMode::none, cfg.width);
        u0 = scaled(u0, 1 / l2_norm(u0));
        auto& out = rep.bands[i];
        out.index = band.index;
        out.scale = eps;
        // largest horizon allowed by the light-cone rule
        const LightCone c0 = light_cone(u0, 0);
        out.T = (c0.limit - c0.r_support) / (2 * std::sqrt(c0.lambda_max));
        out.cone = enforce_light_cone(u0, out.T);
        const auto prof = lq_time_profile(u0, cfg.p, cfg.q, out.T, cfg.panels, cfg.order);
        out.ratio = prof.back();
        out.ratio_half = prof[prof.size() - 2];
        out.increment = out.ratio / out.ratio_half - 1;
    }
    double lo = std::numeric_limits<double>::infinity(), hi = 0;
    for (const auto& bnd : rep.bands) {
        lo = std::min(lo, bnd.ratio);
        hi = std::max(hi, bnd.ratio);
        rep.max_increment = std::max(rep.max_increment, bnd.increment);
    }
    rep.spread = hi / lo;
    return rep;
}

// ---------------------------------------------------------------------------
// L2-critical NLS by Picard iteration on the Duhamel formula
//
// In the interaction picture w(t) = e^{itP} u(t) the equation reads w' = -i sigma e^{itP} N(u),
// N(u) = |u|^{4/n} u. Each uniform time panel carries Gauss-Legendre nodes; the Duhamel integral
// at panel ends is the Gauss rule and at interior nodes the interpolatory integration matrix,
// i.e. Gauss collocation, which keeps ||w|| exact at panel ends once the iteration has converged.

struct NlsOptions {
    double sigma = 1;        // 0 switches the nonlinearity off
    double T = 16;
    double dt = 0.5;         // panel length
    std::size_t stages = 8;  // Gauss nodes per panel
    double tol = 1e-12;
    int max_iter = 30;
    bool both_directions = true;
    bool enforce_cone = true;
};

struct NlsDirection {
    std::vector<double> mesh;                      // panel ends 0, dt, ..., T (signed)
    std::vector<std::vector<std::vector<cplx>>> w; // [mesh][ell] eigen-coefficients of e^{itP} u(t)
    std::vector<double> nodes;                     // interior Gauss nodes (signed)
    std::vector<std::vector<std::vector<cplx>>> wn;// [node][ell]
    std::vector<std::vector<std::vector<cplx>>> gn;// [node][ell] e^{isP} N(u(s)) of the final iterate
};

struct NlsRun {
    double sigma = 1;
    double u0_norm = 0;
    double T = 0;
    int iterations = 0;
    bool converged = false;
    bool diverged = false;
    double fixed_point_residual = 0;     // sup_t ||u^{k+1} - u^k||_2 at the last iterate
    std::vector<double> increments;      // sup_t ||u^{k+1} - u^k||_2 per iterate
    std::vector<double> x_increments;    // ||u^{k+1} - u^k||_X per iterate
    std::vector<double> contraction;     // ratios of consecutive X increments
    double x_norm = 0;
    double mass_drift = 0;               // max over mesh times | ||u(t)|| - ||u0|| |
    LightCone cone;
    std::shared_ptr<const ModeBasis> basis;
    NlsDirection forward, backward;
    NlsOptions options;
};

namespace detail {

// S[q][j] = int_{-1}^{x_q} l_j(x) dx for the Lagrange basis on the Gauss nodes x.
inline std::vector<std::vector<double>> gauss_integration_matrix(const Rule& g)
{
    const std::size_t m = g.x.size();
    std::vector<std::vector<double>> S(m, std::vector<double>(m, 0.0));
    const Rule sub = gauss_legendre(m);
    for (std::size_t q = 0; q < m; ++q) {
        const double a = -1, b = g.x[q];
        for (std::size_t k = 0; k < m; ++k) {
            const double x = 0.5 * (a + b) + 0.5 * (b - a) * sub.x[k];
            const double wk = 0.5 * (b - a) * sub.w[k];
            for (std::size_t j = 0; j < m; ++j) {
                double l = 1;
                for (std::size_t i = 0; i < m; ++i)
                    if (i != j) l *= (x - g.x[i]) / (g.x[j] - g.x[i]);
                S[q][j] += wk * l;
            }
        }
    }
    return S;
}

struct NlsWork {
    const ModeBasis* basis = nullptr;
    AngularGrid grid;
    double power = 0;
    double sigma = 1;
};

// e^{isP} N(e^{-isP} w) for a batch of times; W[ell] is M x m column-major.
inline std::vector<std::vector<cplx>> nonlinear_batch(const NlsWork& wk, const std::vector<std::vector<cplx>>& W,
                                                      const std::vector<double>& s)
{
    const auto& b = *wk.basis;
    const std::size_t m = s.size(), L = b.ops.size(), N = b.size(), K = wk.grid.theta.size();
    // nodal Liouville values per mode and time
    std::vector<std::vector<cplx>> V(L);
    for (std::size_t l = 0; l < L; ++l) {
        const auto& op = b.ops[l];
        const std::size_t M = op.modes();
        std::vector<cplx> C(M * m);
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t k = 0; k < M; ++k) C[k + j * M] = W[l][k + j * M] * std::polar(1.0, -s[j] * op.lambda[k]);
        V[l] = from_eigen_batch(op, C, m);
    }
    std::vector<double> gauge(N), igauge(N);
    for (std::size_t i = 0; i < N; ++i) {
        gauge[i] = std::pow(b.metric.f(b.r()[i]), -0.5 * (b.metric.n - 1));
        igauge[i] = 1 / gauge[i];
    }
    std::vector<std::vector<cplx>> out(L);
    std::vector<std::vector<cplx>> Nv(L, std::vector<cplx>(N * m, cplx{}));
    parallel_for(m, [&](std::size_t j) {
        std::vector<cplx> u(K);
        for (std::size_t i = 0; i < N; ++i) {
            std::fill(u.begin(), u.end(), cplx{});
            for (std::size_t l = 0; l < L; ++l) {
                const cplx v = V[l][i + j * N] * gauge[i];
                if (v == cplx{}) continue;
                for (std::size_t k = 0; k < K; ++k) u[k] += v * wk.grid.Y[l][k];
            }
            for (auto& x : u) x *= wk.sigma * std::pow(std::abs(x), wk.power);
            for (std::size_t l = 0; l < L; ++l) {
                cplx a = 0;
                for (std::size_t k = 0; k < K; ++k) a += wk.grid.weight[k] * wk.grid.Y[l][k] * u[k];
                Nv[l][i + j * N] = a * igauge[i];
            }
        }
    });
    for (std::size_t l = 0; l < L; ++l) {
        const auto& op = b.ops[l];
        const std::size_t M = op.modes();
        // analysis of all columns at once: C = Z^T V
        std::vector<double> in(2 * N * m), res(2 * M * m);
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t i = 0; i < N; ++i) {
                in[i + 2 * j * N] = Nv[l][i + j * N].real();
                in[i + (2 * j + 1) * N] = Nv[l][i + j * N].imag();
            }
        cblas_dgemm(CblasColMajor, CblasTrans, CblasNoTrans, M, 2 * m, N, 1.0, op.Z.data(), N, in.data(), N, 0.0, res.data(), M);
        out[l].resize(M * m);
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t k = 0; k < M; ++k)
                out[l][k + j * M] = cplx(res[k + 2 * j * M], res[k + (2 * j + 1) * M]) * std::polar(1.0, s[j] * op.lambda[k]);
    }
    return out;
}

} // namespace detail

// One direction of the Picard iteration, t in [0, T] (the caller conjugates for t < 0).
// Returns per-iterate increments through the out-parameters.
inline NlsDirection nls_half(const FieldState& u0, const NlsOptions& o, std::vector<double>& sup_inc, std::vector<double>& x_inc,
                             double& x_norm_pow, double& sup_l2, int& iterations, bool& converged)
{
    const auto& b = *u0.basis;
    const int n = b.metric.n;
    const std::size_t L = b.ops.size();
    const std::size_t P = static_cast<std::size_t>(std::llround(o.T / o.dt));
    if (P < 1 || std::abs(P * o.dt - o.T) > 1e-9 * o.T) throw std::invalid_argument("nls_picard: T must be a multiple of dt");
    const Rule g = gauss_legendre(o.stages);
    const auto S = detail::gauss_integration_matrix(g);
    const std::size_t m = o.stages, nodes = P * m;
    std::vector<double> s(nodes), wq(nodes);
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t q = 0; q < m; ++q) {
            s[p * m + q] = (p + 0.5) * o.dt + 0.5 * o.dt * g.x[q];
            wq[p * m + q] = 0.5 * o.dt * g.w[q];
        }
    detail::NlsWork wk;
    wk.basis = &b;
    wk.grid = make_angular_grid(n, b.ell_max(), default_angular_nodes(n, b.ell_max()));
    wk.power = 4.0 / n;
    wk.sigma = o.sigma;
    const double q_x = 2 + 4.0 / n;

    std::vector<std::vector<cplx>> c0(L);
    for (std::size_t l = 0; l < L; ++l) c0[l] = to_eigen(b.ops[l], u0.coeffs[l]);

    // iterate 0: free evolution, w constant
    std::vector<std::vector<cplx>> W(L), Wmesh(L);
    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t M = b.ops[l].modes();
        W[l].resize(M * nodes);
        Wmesh[l].resize(M * (P + 1));
        for (std::size_t j = 0; j < nodes; ++j) std::copy(c0[l].begin(), c0[l].end(), W[l].begin() + j * M);
        for (std::size_t j = 0; j <= P; ++j) std::copy(c0[l].begin(), c0[l].end(), Wmesh[l].begin() + j * M);
    }
    std::vector<std::vector<cplx>> G;
    const AngularGrid xgrid = make_angular_grid(n, b.ell_max(), default_angular_nodes(n, b.ell_max()));

    // space-time L^q norm of the difference of two node sets (interaction coefficients)
    auto node_states = [&](const std::vector<std::vector<cplx>>& A) {
        std::vector<FieldState> st(nodes, zero_state(u0.basis));
        for (std::size_t l = 0; l < L; ++l) {
            const auto& op = b.ops[l];
            const std::size_t M = op.modes(), N = op.size();
            std::vector<cplx> C(M * nodes);
            for (std::size_t j = 0; j < nodes; ++j)
                for (std::size_t k = 0; k < M; ++k) C[k + j * M] = A[l][k + j * M] * std::polar(1.0, -s[j] * op.lambda[k]);
            const auto V = from_eigen_batch(op, C, nodes);
            for (std::size_t j = 0; j < nodes; ++j) std::copy(V.begin() + j * N, V.begin() + (j + 1) * N, st[j].coeffs[l].begin());
        }
        return st;
    };
    auto spacetime = [&](const std::vector<std::vector<cplx>>& A) {
        const auto st = node_states(A);
        std::vector<double> v(nodes);
        parallel_for(nodes, [&](std::size_t j) { v[j] = std::pow(lq_norm(st[j], q_x, xgrid.theta.size()), q_x); });
        double acc = 0;
        for (std::size_t j = 0; j < nodes; ++j) acc += wq[j] * v[j];
        return acc;
    };
    auto sup_diff = [&](const std::vector<std::vector<cplx>>& A, const std::vector<std::vector<cplx>>& B, std::size_t cols) {
        double worst = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            double a = 0;
            for (std::size_t l = 0; l < L; ++l) {
                const std::size_t M = b.ops[l].modes();
                for (std::size_t k = 0; k < M; ++k) a += std::norm(A[l][k + j * M] - B[l][k + j * M]);
            }
            worst = std::max(worst, std::sqrt(a * b.dr));
        }
        return worst;
    };

    converged = false;
    iterations = 0;
    int growing = 0;
    for (int it = 1; it <= o.max_iter; ++it) {
        G = detail::nonlinear_batch(wk, W, s);
        std::vector<std::vector<cplx>> Wn(L), Wm(L);
        for (std::size_t l = 0; l < L; ++l) {
            const std::size_t M = b.ops[l].modes();
            Wn[l].resize(M * nodes);
            Wm[l].resize(M * (P + 1));
            std::vector<cplx> acc = c0[l];
            std::copy(acc.begin(), acc.end(), Wm[l].begin());
            for (std::size_t p = 0; p < P; ++p) {
                for (std::size_t q = 0; q < m; ++q) {
                    cplx* dst = &Wn[l][(p * m + q) * M];
                    for (std::size_t k = 0; k < M; ++k) {
                        cplx a = 0;
                        for (std::size_t j = 0; j < m; ++j) a += S[q][j] * G[l][k + (p * m + j) * M];
                        dst[k] = acc[k] + cplx(0, -1) * (0.5 * o.dt) * a;
                    }
                }
                for (std::size_t k = 0; k < M; ++k) {
                    cplx a = 0;
                    for (std::size_t j = 0; j < m; ++j) a += g.w[j] * G[l][k + (p * m + j) * M];
                    acc[k] += cplx(0, -1) * (0.5 * o.dt) * a;
                }
                std::copy(acc.begin(), acc.end(), Wm[l].begin() + (p + 1) * M);
            }
        }
        const double inc = std::max(sup_diff(Wn, W, nodes), sup_diff(Wm, Wmesh, P + 1));
        std::vector<std::vector<cplx>> D(L);
        for (std::size_t l = 0; l < L; ++l) {
            D[l].resize(Wn[l].size());
            for (std::size_t i = 0; i < D[l].size(); ++i) D[l][i] = Wn[l][i] - W[l][i];
        }
        sup_inc.push_back(inc);
        x_inc.push_back(spacetime(D));
        W = std::move(Wn);
        Wmesh = std::move(Wm);
        iterations = it;
        if (!std::isfinite(inc) || !std::isfinite(x_inc.back())) break;
        if (x_inc.size() >= 2 && x_inc.back() >= x_inc[x_inc.size() - 2]) {
            if (++growing >= 3) break;
        } else {
            growing = 0;
        }
        if (inc < o.tol) {
            converged = true;
            break;
        }
    }
    x_norm_pow = spacetime(W);
    sup_l2 = 0;
    NlsDirection dir;
    for (std::size_t p = 0; p <= P; ++p) {
        dir.mesh.push_back(p * o.dt);
        std::vector<std::vector<cplx>> wl(L);
        double a = 0;
        for (std::size_t l = 0; l < L; ++l) {
            const std::size_t M = b.ops[l].modes();
            wl[l].assign(Wmesh[l].begin() + p * M, Wmesh[l].begin() + (p + 1) * M);
            for (const auto& x : wl[l]) a += std::norm(x);
        }
        sup_l2 = std::max(sup_l2, std::sqrt(a * b.dr));
        dir.w.push_back(std::move(wl));
    }
    G = detail::nonlinear_batch(wk, W, s);
    for (std::size_t j = 0; j < nodes; ++j) {
        dir.nodes.push_back(s[j]);
        std::vector<std::vector<cplx>> wl(L), gl(L);
        double a = 0;
        for (std::size_t l = 0; l < L; ++l) {
            const std::size_t M = b.ops[l].modes();
            wl[l].assign(W[l].begin() + j * M, W[l].begin() + (j + 1) * M);
            gl[l].assign(G[l].begin() + j * M, G[l].begin() + (j + 1) * M);
            for (const auto& x : wl[l]) a += std::norm(x);
        }
        sup_l2 = std::max(sup_l2, std::sqrt(a * b.dr));
        dir.wn.push_back(std::move(wl));
        dir.gn.push_back(std::move(gl));
    }
    return dir;
}

inline NlsRun nls_picard(const FieldState& u0, const NlsOptions& o = {})
{
    NlsRun run;
    run.sigma = o.sigma;
    run.T = o.T;
    run.options = o;
    run.basis = u0.basis;
    run.u0_norm = l2_norm(u0);
    run.cone = o.enforce_cone ? enforce_light_cone(u0, o.T) : light_cone(u0, o.T);
    std::vector<double> fs, fx, bs, bx;
    double fxn = 0, bxn = 0, fsup = 0, bsup = 0;
    int fit = 0, bit = 0;
    bool fconv = false, bconv = true;
    run.forward = nls_half(u0, o, fs, fx, fxn, fsup, fit, fconv);
    if (o.both_directions) {
        // t -> -t with conjugated data
        run.backward = nls_half(conjugate(u0), o, bs, bx, bxn, bsup, bit, bconv);
        for (auto& t : run.backward.mesh) t = -t;
        for (auto& t : run.backward.nodes) t = -t;
        for (auto* blk : {&run.backward.w, &run.backward.wn, &run.backward.gn})
            for (auto& per : *blk)
                for (auto& v : per)
                    for (auto& x : v) x = std::conj(x);
    }
    run.iterations = std::max(fit, bit);
    run.converged = fconv && bconv;
    const std::size_t K = std::max(fs.size(), bs.size());
    const double qx = 2 + 4.0 / u0.n();
    for (std::size_t k = 0; k < K; ++k) {
        const double a = k < fs.size() ? fs[k] : 0, c = k < bs.size() ? bs[k] : 0;
        run.increments.push_back(std::max(a, c));
        const double xa = k < fx.size() ? fx[k] : 0, xc = k < bx.size() ? bx[k] : 0;
        // X increment: space-time L^q over [-T, T] plus the sup-in-time L2 part
        run.x_increments.push_back(std::pow(xa + xc, 1 / qx) + std::max(a, c));
    }
    for (std::size_t k = 1; k < run.x_increments.size(); ++k)
        run.contraction.push_back(run.x_increments[k] / run.x_increments[k - 1]);
    int streak = 0;
    for (double c : run.contraction) {
        streak = (c >= 1 || !std::isfinite(c)) ? streak + 1 : 0;
        if (streak >= 3) run.diverged = true;
    }
    for (double x : run.increments)
        if (!std::isfinite(x)) run.diverged = true;
    run.fixed_point_residual = run.increments.empty() ? 0 : run.increments.back();
    run.x_norm = std::pow(fxn + bxn, 1 / qx) + std::max(fsup, bsup);
    auto drift = [&](const NlsDirection& d) {
        for (const auto& wl : d.w) {
            double a = 0;
            for (const auto& v : wl)
                for (const auto& x : v) a += std::norm(x);
            run.mass_drift = std::max(run.mass_drift, std::abs(std::sqrt(a * run.basis->dr) - run.u0_norm));
        }
    };
    drift(run.forward);
    if (o.both_directions) drift(run.backward);
    return run;
}

// u(t) at a mesh time of the run (index into forward or backward mesh).
inline FieldState nls_state(const NlsRun& run, bool forward, std::size_t mesh_index)
{
    const auto& d = forward ? run.forward : run.backward;
    const double t = d.mesh.at(mesh_index);
    FieldState s = zero_state(run.basis);
    s.t = t;
    for (std::size_t l = 0; l < s.coeffs.size(); ++l) {
        const auto& op = run.basis->ops[l];
        std::vector<cplx> c = d.w[mesh_index][l];
        for (std::size_t k = 0; k < c.size(); ++k) c[k] *= std::polar(1.0, -t * op.lambda[k]);
        s.coeffs[l] = from_eigen(op, c);
    }
    return s;
}

struct ScatteringReport {
    std::vector<double> times;           // ladder T_k (positive)
    std::vector<double> plus_residuals;  // ||w(T_k) - w(T_k / 2)||
    std::vector<double> minus_residuals;
    double min_plus_factor = 0;          // min over consecutive residual ratios
    double min_minus_factor = 0;
    bool cauchy = false;
};

// w(t) = e^{itP} u(t) on the dyadic ladder T, T/2, ... (at least `levels` points, all on the mesh).
inline ScatteringReport scattering_detect(const NlsRun& run, int levels = 4, double min_factor = 1.0)
{
    ScatteringReport rep;
    const double dt = run.options.dt;
    auto residual = [&](const NlsDirection& d, double T) {
        const std::size_t i = static_cast<std::size_t>(std::llround(T / dt)), h = static_cast<std::size_t>(std::llround(0.5 * T / dt));
        if (i >= d.w.size() || 2 * h != i) throw std::invalid_argument("scattering_detect: ladder does not sit on the time mesh");
        double a = 0;
        for (std::size_t l = 0; l < d.w[i].size(); ++l)
            for (std::size_t k = 0; k < d.w[i][l].size(); ++k) a += std::norm(d.w[i][l][k] - d.w[h][l][k]);
        return std::sqrt(a * run.basis->dr);
    };
    for (int k = levels - 1; k >= 0; --k) rep.times.push_back(run.T / std::pow(2.0, k));
    for (double T : rep.times) {
        rep.plus_residuals.push_back(residual(run.forward, T));
        if (run.options.both_directions) rep.minus_residuals.push_back(residual(run.backward, T));
    }
    auto factor = [](const std::vector<double>& r) {
        double f = std::numeric_limits<double>::infinity();
        for (std::size_t k = 1; k < r.size(); ++k) f = std::min(f, r[k] > 0 ? r[k - 1] / r[k] : std::numeric_limits<double>::infinity());
        return f;
    };
    rep.min_plus_factor = factor(rep.plus_residuals);
    rep.min_minus_factor = rep.minus_residuals.empty() ? rep.min_plus_factor : factor(rep.minus_residuals);
    rep.cauchy = rep.min_plus_factor > min_factor && rep.min_minus_factor > min_factor;
    return rep;
}

// || i d_t u - P u - sigma |u|^{4/n} u ||_2 at interior Gauss nodes of the forward direction:
// in the interaction picture this is || i w'(s) - e^{isP} sigma N(u(s)) || with w' from the
// derivative of the panel interpolant through the panel start and its nodes.
inline double nls_pde_residual(const NlsRun& run)
{
    const auto& d = run.forward;
    const std::size_t m = run.options.stages;
    const double dt = run.options.dt;
    const Rule g = gauss_legendre(m);
    // interpolation points on [-1, 1]: panel start then the Gauss nodes
    std::vector<double> x{-1.0};
    x.insert(x.end(), g.x.begin(), g.x.end());
    const std::size_t K = x.size();
    std::vector<double> bw(K, 1.0);
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < K; ++j)
            if (i != j) bw[i] /= (x[i] - x[j]);
    std::vector<std::vector<double>> Dm(K, std::vector<double>(K, 0.0));
    for (std::size_t i = 0; i < K; ++i) {
        double diag = 0;
        for (std::size_t j = 0; j < K; ++j)
            if (i != j) {
                Dm[i][j] = bw[j] / bw[i] / (x[i] - x[j]);
                diag -= Dm[i][j];
            }
        Dm[i][i] = diag;
    }
    double worst = 0;
    const std::size_t P = d.mesh.size() - 1;
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t q = 0; q < m; ++q) {
            double a = 0;
            for (std::size_t l = 0; l < d.w[p].size(); ++l)
                for (std::size_t k = 0; k < d.w[p][l].size(); ++k) {
                    cplx dw = Dm[q + 1][0] * d.w[p][l][k];
                    for (std::size_t j = 0; j < m; ++j) dw += Dm[q + 1][j + 1] * d.wn[p * m + j][l][k];
                    dw *= 2 / dt;
                    a += std::norm(cplx(0, 1) * dw - d.gn[p * m + q][l][k]);
                }
            worst = std::max(worst, std::sqrt(a * run.basis->dr));
        }
    return worst;
}

} // namespace conic
