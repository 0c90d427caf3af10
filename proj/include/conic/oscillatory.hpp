#pragma once

// Oscillatory integrals
//   I = (2 pi h)^{-2} int int exp(i Phi / h) A d varrho d vartheta,
//   Phi = varrho psi(r, theta, vartheta) - s varrho^2 - varrho psi'(r', theta', vartheta),
// evaluated by composite Gauss-Legendre over the compact (varrho, vartheta) support.

#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "conic/fit.hpp"
#include "conic/harness/parallel.hpp"
#include "conic/phase.hpp"
#include "conic/quadrature.hpp"

namespace conic {

using cplx = std::complex<double>;

// Smooth compactly supported bump on (-1, 1) with bump(0) = 1.
inline double bump(double t)
{
    if (std::abs(t) >= 1) return 0.0;
    return std::exp(1.0 - 1.0 / (1.0 - t * t));
}

// Parameters of the support set: (r, theta, vartheta) with r > R, theta in V, |theta - vartheta| < eps;
// the primed triple likewise; varrho^2 in I with sign(varrho) = sign.
struct KernelSupport {
    double R = 20, V_lo = -0.3, V_hi = 0.3;
    double R_prime = 20, Vp_lo = -0.3, Vp_hi = 0.3;
    double I_lo = 0.25, I_hi = 4;
    double eps = 0.1, eps_prime = 0.1;
    int sign = 1;

    double varrho_lo() const { return sign * (sign > 0 ? std::sqrt(I_lo) : std::sqrt(I_hi)); }
    double varrho_hi() const { return sign * (sign > 0 ? std::sqrt(I_hi) : std::sqrt(I_lo)); }
    double varrho_mid() const { return 0.5 * (varrho_lo() + varrho_hi()); }
};

using Amplitude = std::function<cplx(double r, double theta, double rp, double thetap, double varrho, double vartheta)>;

struct FioKernelSpec {
    const EikonalTable* table = nullptr;
    const EikonalTable* table_prime = nullptr; // may alias table
    Amplitude amplitude;
    KernelSupport support;
    double h = 1;
};

// Product of bumps filling the support: varrho bump over the I-interval, vartheta bumps of radius eps
// around theta and eps' around theta'.
inline Amplitude bump_amplitude(const KernelSupport& sp)
{
    const double c = sp.varrho_mid(), w = 0.5 * std::abs(sp.varrho_hi() - sp.varrho_lo());
    return [=](double, double th, double, double thp, double vr, double vt) -> cplx {
        return bump((vr - c) / w) * bump((vt - th) / sp.eps) * bump((vt - thp) / sp.eps_prime);
    };
}

inline FioKernelSpec make_kernel_spec(const EikonalTable& t, double h, double eps = 0.1, double eps_prime = 0.1)
{
    FioKernelSpec k;
    k.table = k.table_prime = &t;
    k.support.R = k.support.R_prime = t.r.front();
    k.support.V_lo = k.support.Vp_lo = t.theta.front();
    k.support.V_hi = k.support.Vp_hi = t.theta.back();
    k.support.I_lo = t.domain.I_lo;
    k.support.I_hi = t.domain.I_hi;
    k.support.eps = eps;
    k.support.eps_prime = eps_prime;
    k.support.sign = t.domain.sign;
    k.amplitude = bump_amplitude(k.support);
    k.h = h;
    return k;
}

struct QuadSpec {
    std::size_t order = 8;
    std::size_t panels_rho = 0;      // 0: chosen from the Nyquist estimate
    std::size_t panels_vartheta = 0; // 0: chosen from the Nyquist estimate
    double oversample = 3;           // nodes per Nyquist node in automatic mode
    std::size_t min_panels = 4;
    double rel_tol = 1e-4;
    int max_doublings = 4;
    std::size_t max_nodes = 1u << 15; // per dimension
};

class NyquistError : public std::runtime_error {
public:
    NyquistError(const std::string& what, double needed) : std::runtime_error(what), nodes_needed(needed) {}
    double nodes_needed;
};

struct KernelPoint {
    double r, theta, r_prime, theta_prime;
};

struct KernelValue {
    cplx value{0, 0};
    bool converged = true;
    bool below_floor = false; // |value| at roundoff level; excluded from fits
    double rel_change = 0;
    double floor = 0;
    std::size_t n_rho = 0, n_vartheta = 0;
    double nyquist_rho = 0, nyquist_vartheta = 0;
};

namespace detail {

inline void check_point(const FioKernelSpec& k, const KernelPoint& p, double vlo, double vhi)
{
    const auto& sp = k.support;
    std::ostringstream msg;
    if (!k.table || !k.table_prime) msg << "kernel spec without eikonal table";
    else if (p.r < sp.R || p.r_prime < sp.R_prime)
        msg << "point (r=" << p.r << ", r'=" << p.r_prime << ") below the support radii";
    else if (p.theta < sp.V_lo || p.theta > sp.V_hi || p.theta_prime < sp.Vp_lo || p.theta_prime > sp.Vp_hi)
        msg << "angles (" << p.theta << ", " << p.theta_prime << ") outside V";
    else if (vlo < k.table->vartheta.front() - 1e-12 || vhi > k.table->vartheta.back() + 1e-12 ||
             vlo < k.table_prime->vartheta.front() - 1e-12 || vhi > k.table_prime->vartheta.back() + 1e-12)
        msg << "vartheta support [" << vlo << ", " << vhi << "] leaves the eikonal tables";
    if (!msg.str().empty()) throw std::invalid_argument("eval_kernel: " + msg.str());
}

} // namespace detail

// Kernel value at (r, theta, r', theta') and rescaled time s.
inline KernelValue eval_kernel(const FioKernelSpec& k, double s, const KernelPoint& p, const QuadSpec& q = {})
{
    const auto& sp = k.support;
    const double h = k.h;
    if (!(h > 0)) throw std::invalid_argument("eval_kernel: h must be positive");
    const double vlo = std::max(p.theta - sp.eps, p.theta_prime - sp.eps_prime);
    const double vhi = std::min(p.theta + sp.eps, p.theta_prime + sp.eps_prime);
    KernelValue out;
    if (vhi <= vlo) return out; // disjoint angular supports
    detail::check_point(k, p, vlo, vhi);
    const double a = sp.varrho_lo(), b = sp.varrho_hi();
    const double Lr = b - a, Lv = vhi - vlo;

    // phase derivative bounds from a coarse sample
    double grad_r = 0, grad_v = 0, phase_max = 0;
    for (double v : linspace(vlo, vhi, 17)) {
        auto e = k.table->eval(p.r, p.theta, v);
        auto f = k.table_prime->eval(p.r_prime, p.theta_prime, v);
        for (double vr : {a, b}) {
            grad_r = std::max(grad_r, std::abs(e.psi - f.psi - 2 * s * vr));
            phase_max = std::max(phase_max, std::abs(vr * (e.psi - f.psi) - s * vr * vr) / h);
            grad_v = std::max(grad_v, std::abs(vr * (e.dvartheta - f.dvartheta)));
        }
    }
    out.nyquist_rho = grad_r * Lr / (std::numbers::pi * h);
    out.nyquist_vartheta = grad_v * Lv / (std::numbers::pi * h);
    auto auto_panels = [&](double nyq) {
        const double nodes = std::max<double>(q.oversample * nyq, double(q.min_panels * q.order));
        return static_cast<std::size_t>(std::ceil(nodes / q.order));
    };
    std::size_t pr = q.panels_rho ? q.panels_rho : auto_panels(out.nyquist_rho);
    std::size_t pv = q.panels_vartheta ? q.panels_vartheta : auto_panels(out.nyquist_vartheta);
    if (pr * q.order < out.nyquist_rho || pv * q.order < out.nyquist_vartheta) {
        std::ostringstream msg;
        msg << "eval_kernel: quadrature below Nyquist (" << pr * q.order << " x " << pv * q.order << " nodes, need "
            << std::ceil(out.nyquist_rho) << " x " << std::ceil(out.nyquist_vartheta) << ")";
        throw NyquistError(msg.str(), std::max(out.nyquist_rho, out.nyquist_vartheta));
    }

    const double pref = 1.0 / std::pow(2 * std::numbers::pi * h, 2);
    double amp_l1 = 0;
    auto integrate = [&](std::size_t nr_panels, std::size_t nv_panels) {
        if (nr_panels * q.order > q.max_nodes || nv_panels * q.order > q.max_nodes) {
            std::ostringstream msg;
            msg << "eval_kernel: quadrature needs more than " << q.max_nodes << " nodes per dimension";
            throw NyquistError(msg.str(), double(std::max(nr_panels, nv_panels) * q.order));
        }
        auto qr = composite_gauss(q.order, nr_panels, a, b);
        auto qv = composite_gauss(q.order, nv_panels, vlo, vhi);
        cplx sum{0, 0};
        double l1 = 0;
        for (std::size_t j = 0; j < qv.x.size(); ++j) {
            const double v = qv.x[j];
            const double dpsi = k.table->eval(p.r, p.theta, v).psi - k.table_prime->eval(p.r_prime, p.theta_prime, v).psi;
            cplx inner{0, 0};
            for (std::size_t i = 0; i < qr.x.size(); ++i) {
                const double vr = qr.x[i];
                const cplx A = k.amplitude(p.r, p.theta, p.r_prime, p.theta_prime, vr, v);
                if (A == cplx{0, 0}) continue;
                inner += qr.w[i] * A * std::polar(1.0, (vr * dpsi - s * vr * vr) / h);
                l1 += qr.w[i] * qv.w[j] * std::abs(A);
            }
            sum += qv.w[j] * inner;
        }
        amp_l1 = l1;
        return pref * sum;
    };

    cplx coarse = integrate(pr, pv);
    out.n_rho = pr * q.order;
    out.n_vartheta = pv * q.order;
    out.value = coarse;
    out.converged = false;
    for (int d = 0; d < q.max_doublings; ++d) {
        pr *= 2;
        pv *= 2;
        const cplx fine = integrate(pr, pv);
        // rounding of the phase sets the noise level of the sum
        out.floor = 16 * std::numeric_limits<double>::epsilon() * pref * amp_l1 * (1 + phase_max);
        const double diff = std::abs(fine - coarse);
        out.rel_change = diff / std::max(std::abs(fine), out.floor);
        out.value = fine;
        out.n_rho = pr * q.order;
        out.n_vartheta = pv * q.order;
        if (diff <= q.rel_tol * std::abs(fine) || diff <= out.floor) {
            out.converged = true;
            break;
        }
        coarse = fine;
    }
    out.below_floor = std::abs(out.value) <= 10 * out.floor;
    return out;
}

// ---- scans ----

struct ScanSample {
    double h, s, r, theta, r_prime, theta_prime;
    double abs_value;
    double bound_value; // reference bound for the regime (min(h^-2, |hs|^-1) for the dispersive scan)
    bool converged;
    bool below_floor;
};

namespace detail {

inline ScanSample sample_kernel(const FioKernelSpec& k, double s, const KernelPoint& p, const QuadSpec& q,
                                double bound = 0)
{
    auto v = eval_kernel(k, s, p, q);
    return {k.h, s, p.r, p.theta, p.r_prime, p.theta_prime, std::abs(v.value), bound, v.converged, v.below_floor};
}

inline std::vector<std::pair<double, double>> fit_points(const std::vector<ScanSample>& ss,
                                                         const std::function<double(const ScanSample&)>& x)
{
    std::vector<std::pair<double, double>> pts;
    for (auto& s : ss)
        if (s.converged && !s.below_floor) pts.emplace_back(x(s), s.abs_value);
    return pts;
}

inline DecayFit fit_or_nan(const std::vector<std::pair<double, double>>& pts)
{
    if (pts.size() < 3) {
        DecayFit f;
        f.samples = pts.size();
        return f; // exponent stays NaN
    }
    return power_fit(pts);
}

inline double theta_centre(const KernelSupport& sp) { return 0.5 * (std::max(sp.V_lo, sp.Vp_lo) + std::min(sp.V_hi, sp.Vp_hi)); }

} // namespace detail

enum class NonstationaryRegime { radial_sep, angular_sep, stationary };

inline const char* to_string(NonstationaryRegime g)
{
    switch (g) {
    case NonstationaryRegime::radial_sep: return "radial_sep";
    case NonstationaryRegime::angular_sep: return "angular_sep";
    case NonstationaryRegime::stationary: return "stationary";
    }
    return "?";
}

struct NonstationaryScan {
    NonstationaryRegime regime = NonstationaryRegime::radial_sep;
    std::vector<double> h_grid;
    double s = 1;           // time used in the h scan
    double r_prime = 20;    // r' used in the h scan
    double h_spatial = 1;   // h used in the spatial scan
    std::vector<double> scale; // r' and s both scaled by these factors
    double angular_offset = 0.2; // theta - theta' in the angular regime
};

// Ladders that reach the asymptotic regime at desk scale. The angular regime needs eps' = eps^2
// on the kernel and r eps^3 / h >> 1, hence the larger base radius and smaller h.
inline NonstationaryScan default_nonstationary_scan(NonstationaryRegime g)
{
    NonstationaryScan sc;
    sc.regime = g;
    if (g == NonstationaryRegime::radial_sep) {
        sc.h_grid = {1.0, 0.84, 0.71, 0.59, 0.5};
        sc.scale = {1, 1.25, 1.5, 1.75, 2};
    } else {
        sc.h_grid = {1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128};
        sc.s = 8;
        sc.r_prime = 160;
        sc.h_spatial = 0.5;
        sc.scale = {1, 1.5, 2, 3, 4, 6, 8};
    }
    return sc;
}

struct NonstationaryReport {
    NonstationaryRegime regime;
    DecayFit h_fit;       // |I| against 1/h
    DecayFit spatial_fit; // |I| against <s, r, r'>
    std::vector<ScanSample> samples;
    bool pass = false;
};

// Geometry for one regime; theta' sits where the primed vartheta support fits inside V.
inline KernelPoint nonstationary_point(const FioKernelSpec& k, NonstationaryRegime g, double s, double rp,
                                       double offset)
{
    const auto& sp = k.support;
    const double c = detail::theta_centre(sp);
    const double rho_sup = std::max(std::abs(sp.varrho_lo()), std::abs(sp.varrho_hi()));
    const double rho_mid = std::abs(sp.varrho_mid());
    switch (g) {
    case NonstationaryRegime::radial_sep:
        // (1 - delta) r >= r' + 2 s varrho_sup with delta = 3/4
        return {4 * (rp + 2 * std::abs(s) * rho_sup), c, rp, c};
    case NonstationaryRegime::angular_sep:
        // radially stationary, angular supports pushed apart: |theta - vartheta| >= offset - eps' on supp A
        return {rp + 2 * std::abs(s) * rho_mid, c + 0.5 * offset, rp, c - 0.5 * offset};
    case NonstationaryRegime::stationary:
        return {rp + 2 * std::abs(s) * rho_mid, c, rp, c};
    }
    return {};
}

// Each sample is the largest |I| over r, 1.05 r, 1.1 r: the regime holds on all three and the
// maximum smooths the oscillation of |I| along the ladders.
inline NonstationaryReport nonstationary_scan(const FioKernelSpec& k, const NonstationaryScan& sc,
                                              const QuadSpec& q = {})
{
    NonstationaryReport rep;
    rep.regime = sc.regime;
    const std::size_t nh = sc.h_grid.size(), nx = sc.scale.size();
    std::vector<ScanSample> all((nh + nx) * 3);
    parallel_for(all.size(), [&](std::size_t idx) {
        const std::size_t i = idx / 3;
        const double stretch = 1 + 0.05 * double(idx % 3);
        FioKernelSpec kk = k;
        double s = sc.s, rp = sc.r_prime;
        if (i < nh) {
            kk.h = sc.h_grid[i];
        } else {
            kk.h = sc.h_spatial;
            s *= sc.scale[i - nh];
            rp *= sc.scale[i - nh];
        }
        auto p = nonstationary_point(kk, sc.regime, s, rp, sc.angular_offset);
        p.r *= stretch;
        all[idx] = detail::sample_kernel(kk, s, p, q);
    });
    std::vector<ScanSample> hs, xs;
    for (std::size_t i = 0; i < nh + nx; ++i) {
        ScanSample best = all[3 * i];
        for (int j = 1; j < 3; ++j) {
            const auto& c = all[3 * i + j];
            if (c.abs_value > best.abs_value) best = c;
            best.converged = best.converged && c.converged;
        }
        (i < nh ? hs : xs).push_back(best);
    }
    rep.h_fit = detail::fit_or_nan(detail::fit_points(hs, [](const ScanSample& s) { return 1 / s.h; }));
    rep.spatial_fit = detail::fit_or_nan(detail::fit_points(xs, [](const ScanSample& s) {
        return std::sqrt(1 + s.s * s.s + s.r * s.r + s.r_prime * s.r_prime);
    }));
    rep.samples = hs;
    rep.samples.insert(rep.samples.end(), xs.begin(), xs.end());
    rep.pass = rep.h_fit.exponent <= -3 && rep.spatial_fit.exponent <= -3;
    return rep;
}

struct AngularReport {
    double delta;
    DecayFit fit; // |I| h^2 against s / h
    std::vector<ScanSample> samples;
    std::size_t skipped = 0; // s < h
    bool pass = false;
};

// r |theta - theta'| = delta |s| imposed at the radially stationary radius r = r' + 2 |s| varrho_mid.
inline AngularReport angular_separation_scan(const FioKernelSpec& k, double delta, const std::vector<double>& s_grid,
                                             double r_prime = 40, const QuadSpec& q = {})
{
    AngularReport rep;
    rep.delta = delta;
    const double c = detail::theta_centre(k.support);
    const double rho_mid = std::abs(k.support.varrho_mid());
    std::vector<double> ss;
    for (double s : s_grid) {
        if (std::abs(s) < k.h) ++rep.skipped;
        else ss.push_back(s);
    }
    std::vector<ScanSample> out(ss.size());
    parallel_for(ss.size(), [&](std::size_t i) {
        const double s = ss[i];
        const double r = r_prime + 2 * std::abs(s) * rho_mid;
        const double d = delta * std::abs(s) / r;
        out[i] = detail::sample_kernel(k, s, {r, c + 0.5 * d, r_prime, c - 0.5 * d}, q);
        out[i].abs_value *= k.h * k.h;
    });
    rep.samples = out;
    rep.fit = detail::fit_or_nan(detail::fit_points(out, [](const ScanSample& x) { return std::abs(x.s) / x.h; }));
    rep.pass = rep.fit.exponent <= -3;
    return rep;
}

// The angular stationary phase needs |s| eps^2 / h >> 1, so the kernel should use eps ~ 0.3.
struct DispersiveScan {
    std::vector<double> h_grid{0.25, 0.125};
    std::vector<double> hs_large{2, 4, 8, 16}; // |h s| values of the large-time regime
    std::vector<double> s_over_h_small{0.0, 0.25, 0.5, 1.0};
    double r0 = 40;
    bool negative_times = true; // mirror the large regime to s < 0
};

struct DispersiveReport {
    double C_fit = 0;             // smallest C with |I| <= C min(h^-2, |hs|^-1) on the grid
    double small_s_exponent = 0;  // sup |I| against h for |s| <= h; expected -2
    double large_hs_exponent = 0; // sup |I| against |hs| for |s| >= h; expected -1
    double small_s_modulus_C = 0; // max |I| h^2 over the small regime
    double modulus_bound = 0;     // sup_x int |A| / (2 pi)^2
    std::vector<ScanSample> samples;
    bool all_converged = true;
};

// Samples the radially and angularly stationary configuration (where the supremum sits) and
// two neighbours at distance sqrt(|hs|) in r.
inline DispersiveReport dispersive_scan(const FioKernelSpec& k, const DispersiveScan& sc, const QuadSpec& q = {})
{
    const auto& sp = k.support;
    const double c = detail::theta_centre(sp);
    const double rho_mid = std::abs(sp.varrho_mid());
    struct Job {
        double h, s;
        KernelPoint p;
    };
    std::vector<Job> jobs;
    for (double h : sc.h_grid) {
        for (double t : sc.s_over_h_small) jobs.push_back({h, t * h, {sc.r0 + 2 * t * h * rho_mid, c, sc.r0, c}});
        for (double x : sc.hs_large) {
            const double s = x / h;
            const double w = std::sqrt(x);
            for (double off : {-w, 0.0, w}) {
                jobs.push_back({h, s, {sc.r0 + 2 * s * rho_mid + off, c, sc.r0, c}});
                if (sc.negative_times) jobs.push_back({h, -s, {sc.r0 + off, c, sc.r0 + 2 * s * rho_mid, c}});
            }
        }
    }
    std::vector<ScanSample> out(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t i) {
        FioKernelSpec kk = k;
        kk.h = jobs[i].h;
        const double bound = std::min(std::pow(kk.h, -2), 1 / std::abs(kk.h * jobs[i].s));
        out[i] = detail::sample_kernel(kk, jobs[i].s, jobs[i].p, q, bound);
    });
    DispersiveReport rep;
    rep.samples = out;
    // sup over the sampled points for each (h, s)
    std::map<std::pair<double, double>, double> sup;
    for (auto& x : out) {
        rep.all_converged = rep.all_converged && x.converged;
        auto& v = sup[{x.h, x.s}];
        v = std::max(v, x.abs_value);
        rep.C_fit = std::max(rep.C_fit, x.abs_value / x.bound_value);
    }
    std::vector<std::pair<double, double>> small, large;
    std::map<double, double> small_by_h;
    for (auto& [key, v] : sup) {
        auto [h, s] = key;
        if (std::abs(s) <= h) {
            small_by_h[h] = std::max(small_by_h[h], v);
            rep.small_s_modulus_C = std::max(rep.small_s_modulus_C, v * h * h);
        } else {
            large.emplace_back(std::abs(h * s), v);
        }
    }
    for (auto& [h, v] : small_by_h) small.emplace_back(h, v);
    rep.small_s_exponent = small.size() >= 2 ? power_fit(small).exponent : std::nan("");
    rep.large_hs_exponent = large.size() >= 2 ? power_fit(large).exponent : std::nan("");
    // modulus bound from the amplitude on the diagonal configuration
    {
        auto qr = composite_gauss(8, 8, sp.varrho_lo(), sp.varrho_hi());
        auto qv = composite_gauss(8, 8, c - std::min(sp.eps, sp.eps_prime), c + std::min(sp.eps, sp.eps_prime));
        double l1 = 0;
        for (std::size_t i = 0; i < qr.x.size(); ++i)
            for (std::size_t j = 0; j < qv.x.size(); ++j)
                l1 += qr.w[i] * qv.w[j] * std::abs(k.amplitude(sc.r0, c, sc.r0, c, qr.x[i], qv.x[j]));
        rep.modulus_bound = l1 / std::pow(2 * std::numbers::pi, 2);
    }
    return rep;
}

// ---- parametrix propagation ----

struct ParametrixScan {
    int N = 1;
    int n = 2; // the kernel is taken with respect to <r'>^{n-1} dr' dtheta'
    std::vector<double> s_grid{1, 2, 4, 8, 16, 32};
    std::vector<double> r_prime{40, 80};
    std::size_t r_samples = 10;
    double lower_bound_c = 0.25; // constant in d_varrho phi' + 2 s varrho >= c (r' + s)
};

struct ParametrixReport {
    int N = 0;
    std::vector<double> weighted_sup; // per s
    double s_order = 0;               // fitted exponent of weighted_sup against s
    double max_weighted = 0;
    double min_lower_ratio = 0; // min (d_varrho phi' + 2 s varrho) / (r' + s) over the table samples
    bool lower_bound_ok = false;
    bool pass = false;
};

// Pointwise check of d_varrho phi(r', theta', varrho, vartheta) + 2 s varrho >= c (r' + s) on the table.
inline double parametrix_lower_ratio(const EikonalTable& t, const KernelSupport& sp, const std::vector<double>& s_grid,
                                     const std::vector<double>& r_primes)
{
    double worst = std::numeric_limits<double>::infinity();
    for (double s : s_grid)
        for (double rp : r_primes)
            for (double th : linspace(sp.Vp_lo, sp.Vp_hi, 5))
                for (double vt : linspace(std::max(t.vartheta.front(), th - sp.eps_prime),
                                          std::min(t.vartheta.back(), th + sp.eps_prime), 5))
                    for (double vr : {sp.varrho_lo(), sp.varrho_hi()}) {
                        const double d = sp.sign * (t.eval(rp, th, vt).psi + 2 * s * vr);
                        worst = std::min(worst, d / (rp + std::abs(s)));
                    }
    return worst;
}

// A = a conj(b) with a the bump amplitude (in S_0) and b = <r'>^{n-1} times the bump (in S_{n-1}).
inline Amplitude parametrix_amplitude(const KernelSupport& sp, int n = 2)
{
    auto base = bump_amplitude(sp);
    return [base, n](double r, double th, double rp, double thp, double vr, double vt) {
        return base(r, th, rp, thp, vr, vt) * std::pow(1 + rp * rp, 0.5 * (n - 1));
    };
}

// k.amplitude is A = a(r, theta, .) conj(b(r', theta', .)), for instance parametrix_amplitude(k.support).
inline ParametrixReport parametrix_weight_scan(const FioKernelSpec& k, const ParametrixScan& sc, const QuadSpec& q = {})
{
    ParametrixReport rep;
    rep.N = sc.N;
    rep.min_lower_ratio = parametrix_lower_ratio(*k.table_prime, k.support, sc.s_grid, sc.r_prime);
    rep.lower_bound_ok = rep.min_lower_ratio >= sc.lower_bound_c;
    const double c = detail::theta_centre(k.support);
    const double rho_sup = std::max(std::abs(k.support.varrho_lo()), std::abs(k.support.varrho_hi()));
    const double r_top = k.table->r.back();
    struct Job {
        std::size_t si;
        double s;
        KernelPoint p;
    };
    std::vector<Job> jobs;
    for (std::size_t si = 0; si < sc.s_grid.size(); ++si) {
        const double s = sc.s_grid[si];
        for (double rp : sc.r_prime) {
            const double hi = std::min(r_top, 1.5 * (rp + 2 * std::abs(s) * rho_sup));
            for (double r : geomspace(k.support.R, hi, sc.r_samples)) jobs.push_back({si, s, {r, c, rp, c}});
            jobs.push_back({si, s, {rp + 2 * std::abs(s) * std::abs(k.support.varrho_mid()), c, rp, c}});
        }
    }
    std::vector<double> w(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t i) {
        const auto& j = jobs[i];
        auto v = eval_kernel(k, j.s, j.p, q);
        const double weight = std::pow((j.p.r_prime + std::abs(j.s)) / std::sqrt(1 + j.p.r * j.p.r), sc.N) /
                              std::pow(1 + j.p.r_prime * j.p.r_prime, 0.5 * (sc.n - 1));
        w[i] = std::abs(v.value) * weight;
    });
    rep.weighted_sup.assign(sc.s_grid.size(), 0.0);
    for (std::size_t i = 0; i < jobs.size(); ++i)
        rep.weighted_sup[jobs[i].si] = std::max(rep.weighted_sup[jobs[i].si], w[i]);
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < sc.s_grid.size(); ++i) {
        pts.emplace_back(std::abs(sc.s_grid[i]), rep.weighted_sup[i]);
        rep.max_weighted = std::max(rep.max_weighted, rep.weighted_sup[i]);
    }
    rep.s_order = power_fit(pts).exponent;
    rep.pass = rep.lower_bound_ok && rep.s_order <= 0.1;
    return rep;
}

// ---- diagonal shadow of the factorization ----

struct ShadowResult {
    double kernel_diagonal = 0; // (2 pi)^-2 int int a conj(b0) d varrho d vartheta
    double symbol_integral = 0; // (2 pi)^-2 int int f d rho d eta
    double rel_error = 0;
};

using Symbol = std::function<double(double r, double theta, double rho, double eta)>;

// b0 = f(r, theta, d_r phi, d_theta phi) |det d_{varrho, vartheta} d_{r, theta} phi| / a0 with phi = varrho psi;
// f must be supported where vartheta stays inside the table. f_box bounds its (rho, eta) support.
inline ShadowResult diagonal_shadow(const EikonalTable& t, const Symbol& f, double r, double theta,
                                    std::array<double, 4> f_box, double a0 = 1.0, std::size_t nodes = 96)
{
    const double sgn = t.domain.sign;
    const double vlo = sgn > 0 ? std::sqrt(t.domain.I_lo) : -std::sqrt(t.domain.I_hi);
    const double vhi = sgn > 0 ? std::sqrt(t.domain.I_hi) : -std::sqrt(t.domain.I_lo);
    const double dv = 1e-5;
    auto qr = composite_gauss(8, nodes / 8, vlo, vhi);
    auto qv = composite_gauss(8, nodes / 8, t.vartheta.front() + dv, t.vartheta.back() - dv);
    double K = 0;
    for (std::size_t j = 0; j < qv.x.size(); ++j) {
        const double v = qv.x[j];
        auto e = t.eval(r, theta, v);
        auto ep = t.eval(r, theta, v + dv), em = t.eval(r, theta, v - dv);
        const double drv = (ep.dr - em.dr) / (2 * dv), dtv = (ep.dtheta - em.dtheta) / (2 * dv);
        for (std::size_t i = 0; i < qr.x.size(); ++i) {
            const double vr = qr.x[i];
            const double det = std::abs(e.dr * vr * dtv - vr * drv * e.dtheta);
            const double b0 = f(r, theta, vr * e.dr, vr * e.dtheta) * det / a0;
            K += qr.w[i] * qv.w[j] * a0 * b0;
        }
    }
    auto fr = composite_gauss(8, nodes / 8, f_box[0], f_box[1]);
    auto fe = composite_gauss(8, nodes / 8, f_box[2], f_box[3]);
    double S = 0;
    for (std::size_t i = 0; i < fr.x.size(); ++i)
        for (std::size_t j = 0; j < fe.x.size(); ++j) S += fr.w[i] * fe.w[j] * f(r, theta, fr.x[i], fe.x[j]);
    const double norm = std::pow(2 * std::numbers::pi, -2);
    ShadowResult out{K * norm, S * norm, 0};
    out.rel_error = std::abs(out.kernel_diagonal - out.symbol_integral) / std::abs(out.symbol_integral);
    return out;
}

} // namespace conic
