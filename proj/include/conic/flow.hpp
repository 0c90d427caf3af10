#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "conic/fit.hpp"
#include "conic/geometry.hpp"
#include "conic/harness/parallel.hpp"
#include "conic/harness/rng.hpp"
#include "conic/ode.hpp"

namespace conic {

struct PhasePoint {
    double r = 0, theta = 0, rho = 0, eta = 0;
};

inline std::array<double, 4> to_array(const PhasePoint& p) { return {p.r, p.theta, p.rho, p.eta}; }
inline PhasePoint to_point(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }

class FlowError : public std::runtime_error {
public:
    FlowError(const std::string& what, OdeStatus st, double t) : std::runtime_error(what), status(st), time(t) {}
    OdeStatus status;
    double time;
};

inline double principal_symbol(const ChartMetric2D& m, const PhasePoint& x)
{
    return x.rho * x.rho + m.g(x.r, x.theta) * x.eta * x.eta / (x.r * x.r);
}

inline double principal_symbol(const ChartMetric2D& m, const PhasePoint& x, double eps_scale)
{
    return principal_symbol(eps_scale == 1.0 ? m : m.scaled(eps_scale), x);
}

inline std::array<double, 4> hamilton_rhs(const ChartMetric2D& m, const std::array<double, 4>& y)
{
    const double r = y[0], th = y[1], rho = y[2], eta = y[3];
    const ChartValue c = m.eval(r, th);
    const double ir2 = 1.0 / (r * r);
    const double e2 = eta * eta;
    return {2 * rho, 2 * c.g * eta * ir2, -c.gr * e2 * ir2 + 2 * c.g * e2 * ir2 / r, -c.gt * e2 * ir2};
}

inline std::string describe(OdeStatus s)
{
    switch (s) {
    case OdeStatus::ok: return "ok";
    case OdeStatus::domain_exit: return "domain exit (r <= R_M)";
    case OdeStatus::step_underflow: return "step-size underflow";
    case OdeStatus::too_many_steps: return "step budget exhausted";
    }
    return "?";
}

// Flow sampled at the given times (monotone, same sign as the final one).
inline std::vector<PhasePoint> flow_samples(const ChartMetric2D& m, const PhasePoint& x, const std::vector<double>& times,
                                            double tol)
{
    const double rin = m.domain_inner();
    OdeOptions opt{tol, tol};
    auto run = integrate_stops<4>([&](double, const std::array<double, 4>& y) { return hamilton_rhs(m, y); }, to_array(x),
                                  0.0, times, opt,
                                  [rin](double, const std::array<double, 4>& y) { return y[0] > rin; });
    if (run.status != OdeStatus::ok) {
        std::ostringstream msg;
        msg << "integrate_flow: " << describe(run.status) << " at s = " << run.t_fail;
        throw FlowError(msg.str(), run.status, run.t_fail);
    }
    std::vector<PhasePoint> out;
    out.reserve(run.states.size());
    for (auto& s : run.states) out.push_back(to_point(s));
    return out;
}

inline PhasePoint integrate_flow(const ChartMetric2D& m, const PhasePoint& x, double s, double tol = 1e-10)
{
    if (!(x.r > m.domain_inner())) throw std::domain_error("integrate_flow: initial radius inside R_M");
    if (s == 0) return x;
    return flow_samples(m, x, {s}, tol).front();
}

struct ScatteringData {
    double r_bar = 0, theta_bar = 0, rho_bar = 0, eta_bar = 0;
    double horizon_used = 0;
    double extrapolation_error = 0;
    bool converged = true;
};

struct ScatterOptions {
    double tol = 1e-10;
    double horizon_factor = 10.0; // S0 = factor * r / p^{1/2}
    int doublings = 8;
    int richardson_levels = 1;
};

// Limit of phi_0^{-s} o phi^s. The state is augmented by q = r - 2 s rho, whose
// derivative -2 s rho' is integrated directly so that no cancellation occurs.
inline ScatteringData scattering_map(const ChartMetric2D& m, const PhasePoint& x, int direction,
                                     const ScatterOptions& opt = {})
{
    if (direction != 1 && direction != -1) throw std::invalid_argument("scattering_map: direction must be +1 or -1");
    const double p = principal_symbol(m, x);
    if (!(p > 0)) throw std::invalid_argument("scattering_map: zero momentum");
    const double S0 = direction * opt.horizon_factor * x.r / std::sqrt(p);
    std::vector<double> stops;
    for (int k = 0; k <= opt.doublings; ++k) stops.push_back(S0 * std::ldexp(1.0, k));
    const double rin = m.domain_inner();
    auto rhs = [&](double s, const std::array<double, 5>& y) {
        auto d = hamilton_rhs(m, {y[0], y[1], y[2], y[3]});
        return std::array<double, 5>{d[0], d[1], d[2], d[3], -2 * s * d[2]};
    };
    OdeOptions oo{opt.tol, opt.tol};
    auto run = integrate_stops<5>(rhs, {x.r, x.theta, x.rho, x.eta, x.r}, 0.0, stops, oo,
                                  [rin](double, const std::array<double, 5>& y) { return y[0] > rin; });
    if (run.status != OdeStatus::ok) {
        std::ostringstream msg;
        msg << "scattering_map: " << describe(run.status) << " at s = " << run.t_fail;
        throw FlowError(msg.str(), run.status, run.t_fail);
    }
    const int K = static_cast<int>(run.states.size());
    // ladder values (q, theta, rho, eta)
    std::vector<std::array<double, 4>> lad(K);
    for (int k = 0; k < K; ++k) lad[k] = {run.states[k][4], run.states[k][1], run.states[k][2], run.states[k][3]};
    // Richardson table in 1/s with ratio 2
    std::vector<std::vector<std::array<double, 4>>> T(K);
    for (int k = 0; k < K; ++k) {
        T[k].push_back(lad[k]);
        for (int j = 1; j <= std::min(k, opt.richardson_levels); ++j) {
            const double f = std::ldexp(1.0, j);
            std::array<double, 4> v;
            for (int c = 0; c < 4; ++c) v[c] = (f * T[k][j - 1][c] - T[k - 1][j - 1][c]) / (f - 1);
            T[k].push_back(v);
        }
    }
    const int L = std::min(K - 1, opt.richardson_levels);
    const auto& best = T[K - 1][L];
    const auto& prev = T[K - 2][std::min(K - 2, L)];
    ScatteringData d;
    d.r_bar = best[0];
    d.theta_bar = best[1];
    d.rho_bar = best[2];
    d.eta_bar = best[3];
    d.horizon_used = stops.back();
    double e = 0;
    const double scale[4] = {x.r, 1.0, std::sqrt(p), std::max(std::abs(x.eta), x.r * std::sqrt(p) * 1e-3)};
    for (int c = 0; c < 4; ++c) e = std::max(e, std::abs(best[c] - prev[c]) / scale[c]);
    d.extrapolation_error = e;
    // raw ladder increments must shrink towards the end of the ladder
    auto inc = [&](int k) {
        double v = 0;
        for (int c = 0; c < 4; ++c) v = std::max(v, std::abs(lad[k][c] - lad[k - 1][c]) / scale[c]);
        return v;
    };
    if (K >= 4) {
        double a = inc(K - 3), b = inc(K - 2), c = inc(K - 1);
        const double floor = 1e3 * opt.tol;
        d.converged = !(c > b * 1.01 && c > floor) && !(b > a * 1.01 && b > floor);
    }
    return d;
}

enum class RegionKind { outgoing, incoming, strongly_outgoing, strongly_incoming };

struct ConicRegion {
    RegionKind kind = RegionKind::outgoing;
    double R = 10;
    double V_lo = -1, V_hi = 1;
    double I_lo = 0.5, I_hi = 2;
    double sigma_or_eps = 0;
    double eps_scale = 1;

    int sign() const { return (kind == RegionKind::outgoing || kind == RegionKind::strongly_outgoing) ? 1 : -1; }
    bool strong() const { return kind == RegionKind::strongly_outgoing || kind == RegionKind::strongly_incoming; }
};

inline bool region_contains(const ConicRegion& reg, const ChartMetric2D& m, const PhasePoint& x)
{
    if (!(x.r > reg.R)) return false;
    if (!(x.theta > reg.V_lo && x.theta < reg.V_hi)) return false;
    const double p = principal_symbol(m, x, reg.eps_scale);
    if (!(p > reg.I_lo && p < reg.I_hi)) return false;
    const double sp = std::sqrt(p);
    const double thr = reg.strong() ? (1 - reg.sigma_or_eps * reg.sigma_or_eps) * sp : reg.sigma_or_eps * sp;
    return reg.sign() * x.rho > thr;
}

// Random point of a region: log-uniform radius in (R, r_span R), uniform angle and
// energy, radial fraction rho/p^{1/2} uniform above the region threshold.
inline PhasePoint sample_region(const ConicRegion& reg, const ChartMetric2D& m, CounterRng& rng, double r_span = 4.0)
{
    const ChartMetric2D ms = reg.eps_scale == 1.0 ? m : m.scaled(reg.eps_scale);
    for (int attempt = 0; attempt < 1000; ++attempt) {
        PhasePoint x;
        x.r = reg.R * std::exp(rng.uniform(1e-6, std::log(r_span)));
        x.theta = rng.uniform(reg.V_lo, reg.V_hi);
        const double p = rng.uniform(reg.I_lo, reg.I_hi);
        const double lo = reg.strong() ? 1 - reg.sigma_or_eps * reg.sigma_or_eps : reg.sigma_or_eps;
        const double frac = rng.uniform(lo, 1.0);
        x.rho = reg.sign() * frac * std::sqrt(p);
        const double g = ms.g(x.r, x.theta);
        const double rest = std::max(0.0, p - x.rho * x.rho);
        x.eta = (rng.uniform() < 0.5 ? -1 : 1) * x.r * std::sqrt(rest / g);
        if (region_contains(reg, m, x)) return x;
    }
    throw std::runtime_error("sample_region: could not draw a point inside the region");
}

struct LowerBoundReport {
    double c_observed = std::numeric_limits<double>::infinity();
    PhasePoint worst_case;
    double worst_time = 0;
    bool pass = false;
    std::size_t failures = 0;
    std::string message;
};

// inf over samples and times of rbar^s / (r + |s| p^{1/2}). time_sign = 0 uses the region's sign.
inline LowerBoundReport verify_flow_lower_bound(const ChartMetric2D& m, const ConicRegion& reg, std::size_t sample_count,
                                                double s_max, std::uint64_t seed, double tol = 1e-10, int time_sign = 0)
{
    const ChartMetric2D ms = reg.eps_scale == 1.0 ? m : m.scaled(reg.eps_scale);
    const int sg = time_sign == 0 ? reg.sign() : time_sign;
    std::vector<PhasePoint> pts;
    CounterRng rng(seed, 11);
    for (std::size_t i = 0; i < sample_count; ++i) pts.push_back(sample_region(reg, m, rng));
    std::vector<double> times = geomspace(1e-3 * s_max, s_max, 24);
    for (auto& t : times) t *= sg;
    std::vector<double> cmin(sample_count, 1.0), tmin(sample_count, 0.0);
    std::vector<int> failed(sample_count, 0);
    parallel_for(sample_count, [&](std::size_t i) {
        const double sp = std::sqrt(principal_symbol(ms, pts[i]));
        try {
            auto tr = flow_samples(ms, pts[i], times, tol);
            for (std::size_t k = 0; k < times.size(); ++k) {
                double c = tr[k].r / (pts[i].r + std::abs(times[k]) * sp);
                if (c < cmin[i]) {
                    cmin[i] = c;
                    tmin[i] = times[k];
                }
            }
        } catch (const FlowError& e) {
            failed[i] = 1;
            cmin[i] = 0;
            tmin[i] = e.time;
        }
    });
    LowerBoundReport rep;
    for (std::size_t i = 0; i < sample_count; ++i) {
        rep.failures += failed[i];
        if (cmin[i] < rep.c_observed) {
            rep.c_observed = cmin[i];
            rep.worst_case = pts[i];
            rep.worst_time = tmin[i];
        }
    }
    rep.pass = rep.failures == 0 && rep.c_observed > 0;
    if (rep.failures) rep.message = std::to_string(rep.failures) + " trajectories left the chart";
    return rep;
}

struct ThresholdReport {
    double T_observed = 0;
    std::vector<double> s_star;
    std::size_t not_attained = 0;
    bool pass = false;
};

// First time at which +-rhobar^s / p^{1/2} exceeds 1 - eps^2, by bracketing on a ladder
// and bisection.
inline double outgoing_time(const ChartMetric2D& ms, const PhasePoint& x, int sg, double target, double tol,
                            double horizon_factor = 1e4)
{
    const double sp = std::sqrt(principal_symbol(ms, x));
    auto frac = [&](const PhasePoint& y) { return sg * y.rho / sp; };
    if (frac(x) > target) return 0.0;
    const double unit = x.r / sp;
    std::vector<double> ladder = geomspace(1e-4 * unit, horizon_factor * unit, 120);
    for (auto& t : ladder) t *= sg;
    auto tr = flow_samples(ms, x, ladder, tol);
    double lo = 0, hi = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t k = 0; k < ladder.size(); ++k) {
        if (frac(tr[k]) > target) {
            hi = std::abs(ladder[k]);
            lo = k ? std::abs(ladder[k - 1]) : 0.0;
            break;
        }
    }
    if (std::isnan(hi)) return hi;
    for (int it = 0; it < 60 && hi - lo > 1e-10 * hi; ++it) {
        double mid = 0.5 * (lo + hi);
        if (frac(integrate_flow(ms, x, sg * mid, tol)) > target)
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

inline ThresholdReport verify_outgoing_threshold(const ChartMetric2D& m, const ConicRegion& reg, double eps_strong,
                                                 std::size_t sample_count, std::uint64_t seed, double tol = 1e-10)
{
    const ChartMetric2D ms = reg.eps_scale == 1.0 ? m : m.scaled(reg.eps_scale);
    std::vector<PhasePoint> pts;
    CounterRng rng(seed, 12);
    for (std::size_t i = 0; i < sample_count; ++i) pts.push_back(sample_region(reg, m, rng));
    ThresholdReport rep;
    rep.s_star.assign(sample_count, 0);
    const double target = 1 - eps_strong * eps_strong;
    parallel_for(sample_count, [&](std::size_t i) { rep.s_star[i] = outgoing_time(ms, pts[i], reg.sign(), target, tol); });
    for (std::size_t i = 0; i < sample_count; ++i) {
        if (std::isnan(rep.s_star[i])) {
            ++rep.not_attained;
            continue;
        }
        const double sp = std::sqrt(principal_symbol(ms, pts[i]));
        rep.T_observed = std::max(rep.T_observed, rep.s_star[i] * sp / pts[i].r);
    }
    rep.pass = rep.not_attained == 0 && std::isfinite(rep.T_observed);
    return rep;
}

struct DerivativeBoundReport {
    // d/dr of ((rbar^s - r - 2 s rho)/s, varthetabar^s, varrhobar^s, etabar^s / r)
    DecayFit d_r[4];
    DecayFit d_eta[4];
    DecayFit d_rr[4];
    double C_two_sided = 1; // (r + s)/C <= rbar^s <= C (r + s)
    bool pass = false;
};

struct DerivativeSweep {
    double theta = 0.0;
    double rho = 1.0;
    double kappa = 0.2; // eta / r
    double tau = 1.0;   // s / r
    double r_min = 20, r_max = 2000;
    std::size_t samples = 12;
    double rel_step = 1e-4;
    double tol = 1e-12;
    double fit_threshold = 0.5; // max admissible fit residual
};

inline std::array<double, 4> flow_quantities(const ChartMetric2D& m, const PhasePoint& x, double s, double tol)
{
    auto y = integrate_flow(m, x, s, tol);
    return {(y.r - x.r - 2 * s * x.rho) / s, y.theta, y.rho, y.eta / x.r};
}

inline DerivativeBoundReport verify_flow_derivative_bounds(const ChartMetric2D& m, const DerivativeSweep& sw)
{
    auto rs = geomspace(sw.r_min, sw.r_max, sw.samples);
    const std::size_t N = rs.size();
    std::vector<std::array<double, 4>> dr(N), de(N), drr(N);
    std::vector<double> lo(N), hi(N);
    parallel_for(N, [&](std::size_t i) {
        const double r = rs[i], s = sw.tau * r;
        PhasePoint x{r, sw.theta, sw.rho, sw.kappa * r};
        const double hr = sw.rel_step * r, he = sw.rel_step * std::max(std::abs(x.eta), 1.0);
        auto q0 = flow_quantities(m, x, s, sw.tol);
        PhasePoint a = x, b = x;
        a.r += hr;
        b.r -= hr;
        auto qa = flow_quantities(m, a, s, sw.tol), qb = flow_quantities(m, b, s, sw.tol);
        PhasePoint c = x, d = x;
        c.eta += he;
        d.eta -= he;
        auto qc = flow_quantities(m, c, s, sw.tol), qd = flow_quantities(m, d, s, sw.tol);
        for (int k = 0; k < 4; ++k) {
            dr[i][k] = (qa[k] - qb[k]) / (2 * hr);
            de[i][k] = (qc[k] - qd[k]) / (2 * he);
        }
        // second radial derivative with a wider step (integrator noise is divided by h^2)
        const double h2 = 100 * hr;
        PhasePoint e = x, f = x;
        e.r += h2;
        f.r -= h2;
        auto qe = flow_quantities(m, e, s, sw.tol), qf = flow_quantities(m, f, s, sw.tol);
        for (int k = 0; k < 4; ++k) drr[i][k] = (qe[k] - 2 * q0[k] + qf[k]) / (h2 * h2);
        // two-sided bound along the trajectory
        const double sp = std::sqrt(principal_symbol(m, x));
        auto times = geomspace(1e-3 * s, 10 * s, 16);
        auto tr = flow_samples(m, x, times, sw.tol);
        lo[i] = 1e300;
        hi[i] = 0;
        for (std::size_t k = 0; k < times.size(); ++k) {
            double ratio = tr[k].r / (r + times[k] * sp);
            lo[i] = std::min(lo[i], ratio);
            hi[i] = std::max(hi[i], ratio);
        }
    });
    DerivativeBoundReport rep;
    rep.pass = true;
    for (int k = 0; k < 4; ++k) {
        std::vector<std::pair<double, double>> a, b, c;
        for (std::size_t i = 0; i < N; ++i) {
            a.emplace_back(rs[i], dr[i][k]);
            b.emplace_back(rs[i], de[i][k]);
            c.emplace_back(rs[i], drr[i][k]);
        }
        rep.d_r[k] = power_fit(a);
        rep.d_eta[k] = power_fit(b);
        rep.d_rr[k] = power_fit(c);
        for (const DecayFit* f : {&rep.d_r[k], &rep.d_eta[k]})
            if (!f->identically_zero && f->residual > sw.fit_threshold) rep.pass = false;
    }
    for (std::size_t i = 0; i < N; ++i) rep.C_two_sided = std::max({rep.C_two_sided, hi[i], 1.0 / lo[i]});
    return rep;
}

} // namespace conic
