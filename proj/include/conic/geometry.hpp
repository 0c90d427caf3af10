#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "conic/fit.hpp"

namespace conic {

inline std::uint64_t gamma(unsigned k)
{
    if (k >= 64) throw std::out_of_range("gamma: k too large for 64 bits");
    std::uint64_t g = 0;
    for (unsigned i = 0; i < k; ++i) g = 2 * g + 1;
    return g;
}

inline double japanese(double r) { return std::sqrt(1.0 + r * r); }

// quintic smoothstep, C2 at both ends
inline double smoothstep5(double t)
{
    if (t <= 0) return 0;
    if (t >= 1) return 1;
    return t * t * t * (10 + t * (-15 + 6 * t));
}
inline double smoothstep5_d1(double t)
{
    if (t <= 0 || t >= 1) return 0;
    return 30 * t * t * (1 - t) * (1 - t);
}
inline double smoothstep5_d2(double t)
{
    if (t <= 0 || t >= 1) return 0;
    return 60 * t * (1 - t) * (1 - 2 * t);
}

// 1 for r <= r_flat, r for r >= 2 r_flat
inline double modified_bracket(double r, double r_flat)
{
    if (r < 0) throw std::domain_error("modified_bracket: negative radius");
    if (!(r_flat >= 1)) throw std::invalid_argument("modified_bracket: r_flat must be >= 1");
    if (r <= r_flat) return 1.0;
    if (r >= 2 * r_flat) return r;
    double s = smoothstep5((r - r_flat) / r_flat);
    return (1 - s) + s * r;
}

enum class MetricFamily { flat, power_perturb, bump_perturb };

inline MetricFamily parse_family(const std::string& s)
{
    if (s == "flat") return MetricFamily::flat;
    if (s == "power_perturb") return MetricFamily::power_perturb;
    if (s == "bump_perturb") return MetricFamily::bump_perturb;
    throw std::invalid_argument("unknown metric family '" + s + "'");
}

inline const char* family_name(MetricFamily f)
{
    switch (f) {
    case MetricFamily::flat: return "flat";
    case MetricFamily::power_perturb: return "power_perturb";
    case MetricFamily::bump_perturb: return "bump_perturb";
    }
    return "?";
}

// Radial profile of the perturbation shared by the warped and chart models.
//   power_perturb: a <r>^{-nu}
//   bump_perturb : a (1 - S((r - r_flat)/r_flat)), so the perturbation lives in r < 2 r_flat
struct Profile {
    MetricFamily family = MetricFamily::flat;
    double amplitude = 0.0;
    double nu = 1.0;
    double r_flat = 1.0;

    double v(double r) const
    {
        switch (family) {
        case MetricFamily::flat: return 0.0;
        case MetricFamily::power_perturb: return amplitude * std::pow(1 + r * r, -0.5 * nu);
        case MetricFamily::bump_perturb: return amplitude * (1 - smoothstep5((r - r_flat) / r_flat));
        }
        return 0.0;
    }
    double d1(double r) const
    {
        switch (family) {
        case MetricFamily::flat: return 0.0;
        case MetricFamily::power_perturb: return -amplitude * nu * r * std::pow(1 + r * r, -0.5 * nu - 1);
        case MetricFamily::bump_perturb: return -amplitude * smoothstep5_d1((r - r_flat) / r_flat) / r_flat;
        }
        return 0.0;
    }
    double d2(double r) const
    {
        switch (family) {
        case MetricFamily::flat: return 0.0;
        case MetricFamily::power_perturb: {
            double b2 = 1 + r * r;
            return -amplitude * nu * std::pow(b2, -0.5 * nu - 1)
                + amplitude * nu * (nu + 2) * r * r * std::pow(b2, -0.5 * nu - 2);
        }
        case MetricFamily::bump_perturb:
            return -amplitude * smoothstep5_d2((r - r_flat) / r_flat) / (r_flat * r_flat);
        }
        return 0.0;
    }
};

struct WarpedMetric {
    int n = 3;
    Profile profile;
    double r_flat = 1.0;

    double nu() const { return profile.nu; }
    double vt(double r) const { return profile.v(r); }
    double f(double r) const { return r * (1 + profile.v(r)); }
    double f1(double r) const { return 1 + profile.v(r) + r * profile.d1(r); }
    double f2(double r) const { return 2 * profile.d1(r) + r * profile.d2(r); }
    double bracket(double r) const { return modified_bracket(r, r_flat); }
    bool is_flat() const { return profile.family == MetricFamily::flat || profile.amplitude == 0.0; }
};

inline WarpedMetric make_warped(MetricFamily fam, int n, double amplitude, double nu, double r_flat)
{
    if (n < 2) throw std::invalid_argument("WarpedMetric: n must be >= 2");
    if (!(r_flat >= 1)) throw std::invalid_argument("WarpedMetric: r_flat must be >= 1");
    if (fam != MetricFamily::flat && amplitude <= -1)
        throw std::invalid_argument("WarpedMetric: amplitude must exceed -1 so that f > 0");
    WarpedMetric m;
    m.n = n;
    m.r_flat = r_flat;
    m.profile = Profile{fam, fam == MetricFamily::flat ? 0.0 : amplitude, nu, r_flat};
    return m;
}

inline WarpedMetric flat_warped(int n = 3) { return make_warped(MetricFamily::flat, n, 0, 1, 1); }

struct ChartValue {
    double g, gr, gt, grr, grt, gtt;
};

// Inverse angular metric coefficient of the 2-D chart model,
//   g(r, theta) = (1 + c cos theta) (1 + v(r / eps)),
// where eps is the low-frequency rescaling parameter (1 for the unscaled symbol).
struct ChartMetric2D {
    Profile profile;
    double angular = 0.0;
    double r_inner = 1.0;
    double eps = 1.0;

    double nu() const { return profile.nu; }

    ChartValue eval(double r, double theta) const
    {
        const double x = r / eps;
        const double a = 1 + angular * std::cos(theta);
        const double at = -angular * std::sin(theta);
        const double att = -angular * std::cos(theta);
        const double v = profile.v(x), v1 = profile.d1(x) / eps, v2 = profile.d2(x) / (eps * eps);
        const double b = 1 + v;
        return ChartValue{a * b, a * v1, at * b, a * v2, at * v1, att * b};
    }
    double g(double r, double theta) const { return eval(r, theta).g; }
    double gbar(double theta) const { return 1 + angular * std::cos(theta); }
    double domain_inner() const { return r_inner * eps; }

    ChartMetric2D scaled(double e) const
    {
        if (!(e > 0 && e <= 1)) throw std::invalid_argument("ChartMetric2D::scaled: eps must be in (0,1]");
        ChartMetric2D c = *this;
        c.eps = e;
        return c;
    }
    bool is_flat() const
    {
        return (profile.family == MetricFamily::flat || profile.amplitude == 0.0) && angular == 0.0;
    }
};

inline ChartMetric2D make_chart(MetricFamily fam, double amplitude, double nu, double r_flat,
                                double r_inner = 1.0, double angular = 0.0)
{
    if (std::abs(angular) >= 1) throw std::invalid_argument("ChartMetric2D: |angular| must be < 1");
    if (fam != MetricFamily::flat && amplitude <= -1)
        throw std::invalid_argument("ChartMetric2D: amplitude must exceed -1");
    ChartMetric2D c;
    c.profile = Profile{fam, fam == MetricFamily::flat ? 0.0 : amplitude, nu, r_flat};
    c.angular = angular;
    c.r_inner = r_inner;
    return c;
}

inline ChartMetric2D flat_chart(double r_inner = 1.0) { return make_chart(MetricFamily::flat, 0, 1, 1, r_inner); }

struct SymbolGate {
    DecayFit fit[3];
    bool pass = false;
    std::string message;
};

// Fits v and its first two finite-difference derivatives on [10 r_flat, 1000 r_flat].
inline SymbolGate symbol_class_gate(const Profile& p, double r_flat, std::size_t samples = 24)
{
    SymbolGate gate;
    auto rs = geomspace(10 * r_flat, 1000 * r_flat, samples);
    std::vector<std::pair<double, double>> s0, s1, s2;
    for (double r : rs) {
        const double h = 1e-3 * r;
        const double vm = p.v(r - h), v0 = p.v(r), vp = p.v(r + h);
        s0.emplace_back(r, v0);
        s1.emplace_back(r, (vp - vm) / (2 * h));
        s2.emplace_back(r, (vp - 2 * v0 + vm) / (h * h));
    }
    gate.fit[0] = symbol_decay_fit(s0, 0);
    gate.fit[1] = symbol_decay_fit(s1, 1);
    gate.fit[2] = symbol_decay_fit(s2, 2);
    gate.pass = p.nu > 0;
    std::ostringstream msg;
    if (!(p.nu > 0)) msg << "nu must be positive (got " << p.nu << "); ";
    for (int j = 0; j < 3; ++j) {
        const auto& f = gate.fit[j];
        if (f.identically_zero) continue;
        const double need = -p.nu - j + 0.1;
        if (!(f.exponent <= need) || !(f.exponent < -0.05 - j)) {
            gate.pass = false;
            msg << "derivative " << j << " fitted exponent " << f.exponent << " exceeds " << need << "; ";
        }
    }
    gate.message = msg.str();
    return gate;
}

struct NormalFormResult {
    std::function<double(double)> sigma;
    std::function<double(double)> A_next_minus_one;
    DecayFit fit_before;
    DecayFit fit;
    double ratio_min = 1.0; // observed bounds of (x + x sigma)/x
    double ratio_max = 1.0;
};

struct NormalFormOptions {
    double x_min = 1e3;
    double x_max = 1e6;
    std::size_t samples = 31;
    double jacobian_floor = 0.05;
};

// One step of the radial normal-form reduction. dA is A - 1 (passed separately so that
// the small difference is never formed by cancellation).
inline NormalFormResult normal_form_step(std::function<double(double)> dA, double nu, double R,
                                         const NormalFormOptions& opt = {})
{
    if (!(R > 0)) throw std::invalid_argument("normal_form_step: R must be positive");
    (void)nu;
    // composite Gauss-Legendre in u = log t, panels of width at most 1/4
    auto integral = [dA, R](double x) {
        if (x == R) return 0.0;
        static const double gx[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                     -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                     0.7966664774136267,  0.9602898564975363};
        static const double gw[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                     0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                     0.2223810344533745, 0.1012285362903763};
        const double a = std::log(R), b = std::log(x);
        const int panels = std::max(1, static_cast<int>(std::ceil(std::abs(b - a) / 0.25)));
        const double H = (b - a) / panels;
        double s = 0;
        for (int p = 0; p < panels; ++p) {
            const double c = a + (p + 0.5) * H;
            for (int i = 0; i < 8; ++i) {
                const double t = std::exp(c + 0.5 * H * gx[i]);
                s += 0.5 * H * gw[i] * dA(t) * t;
            }
        }
        return s;
    };
    NormalFormResult out;
    out.sigma = [integral](double x) { return -integral(x) / (2 * x); };
    auto sigma = out.sigma;
    out.A_next_minus_one = [dA, sigma](double x) {
        const double s = sigma(x);
        const double a = dA(x);
        const double a1 = dA(x + x * s);
        // D'(x) = 1 + s + x s' = 1 - a/2 by the balance equation
        const double j = 1 - 0.5 * a;
        return a1 * j * j - a + 0.25 * a * a;
    };

    auto probe = geomspace(R * (1 + 1e-9), std::max(opt.x_max, 10 * R), 200);
    for (double x : probe) {
        double jac = 1 - 0.5 * dA(x);
        if (!(std::abs(jac) >= opt.jacobian_floor)) {
            std::ostringstream m;
            m << "normal_form_step: diffeomorphism not invertible, |1 + sigma + x sigma'| = "
              << std::abs(jac) << " at x = " << x;
            throw std::runtime_error(m.str());
        }
        double ratio = 1 + sigma(x);
        out.ratio_min = std::min(out.ratio_min, ratio);
        out.ratio_max = std::max(out.ratio_max, ratio);
    }

    std::vector<std::pair<double, double>> before, after;
    for (double x : geomspace(opt.x_min, opt.x_max, opt.samples)) {
        before.emplace_back(x, dA(x));
        after.emplace_back(x, out.A_next_minus_one(x));
    }
    auto safe_fit = [](const std::vector<std::pair<double, double>>& s) {
        bool any = false;
        for (auto& [x, v] : s) any = any || v != 0;
        if (!any) {
            DecayFit z;
            z.identically_zero = true;
            z.samples = s.size();
            return z;
        }
        return power_fit(s);
    };
    out.fit_before = safe_fit(before);
    out.fit = safe_fit(after);
    return out;
}

// Function sampled on a tensor grid in (r, theta), values[i * theta.size() + k].
struct GridFunction {
    std::vector<double> r;
    std::vector<double> theta;
    std::vector<double> values;

    double at(std::size_t i, std::size_t k) const { return values[i * theta.size() + k]; }
    double& at(std::size_t i, std::size_t k) { return values[i * theta.size() + k]; }
};

// 4-point Lagrange interpolation along r on a monotone grid; zero outside the grid.
inline GridFunction resample_r(const GridFunction& v, const std::vector<double>& target)
{
    GridFunction out{target, v.theta, std::vector<double>(target.size() * v.theta.size(), 0.0)};
    const auto& x = v.r;
    const std::size_t N = x.size();
    if (N < 4) throw std::invalid_argument("resample_r: need at least 4 radial nodes");
    for (std::size_t t = 0; t < target.size(); ++t) {
        const double xt = target[t];
        if (xt < x.front() || xt > x.back()) continue;
        std::size_t j = std::upper_bound(x.begin(), x.end(), xt) - x.begin();
        std::size_t i0 = (j >= 2) ? j - 2 : 0;
        if (i0 + 4 > N) i0 = N - 4;
        double w[4];
        for (int a = 0; a < 4; ++a) {
            double l = 1;
            for (int b = 0; b < 4; ++b)
                if (b != a) l *= (xt - x[i0 + b]) / (x[i0 + a] - x[i0 + b]);
            w[a] = l;
        }
        for (std::size_t k = 0; k < v.theta.size(); ++k) {
            double s = 0;
            for (int a = 0; a < 4; ++a) s += w[a] * v.at(i0 + a, k);
            out.at(t, k) = s;
        }
    }
    return out;
}

enum class RescaleDirection { forward, inverse };

// (D_eps v)(r, theta) = eps^{n/2} v(eps r, theta). Without a target grid the result lives
// on the exactly scaled grid; otherwise it is resampled onto the target.
inline GridFunction apply_rescaling(const GridFunction& v, double eps, RescaleDirection dir, int n,
                                    double R_M, const std::vector<double>* target = nullptr)
{
    if (!(eps > 0 && eps <= 1)) throw std::invalid_argument("apply_rescaling: eps must be in (0,1]");
    const double limit = dir == RescaleDirection::forward ? R_M : R_M / eps;
    for (std::size_t i = 0; i < v.r.size(); ++i) {
        if (v.r[i] > limit) continue;
        for (std::size_t k = 0; k < v.theta.size(); ++k)
            if (v.at(i, k) != 0.0) {
                std::ostringstream m;
                m << "apply_rescaling: support violation at r = " << v.r[i] << " (must lie in r > " << limit << ")";
                throw std::domain_error(m.str());
            }
    }
    GridFunction out = v;
    const double amp = dir == RescaleDirection::forward ? std::pow(eps, 0.5 * n) : std::pow(eps, -0.5 * n);
    for (auto& r : out.r) r = dir == RescaleDirection::forward ? r / eps : r * eps;
    for (auto& x : out.values) x *= amp;
    if (target) return resample_r(out, *target);
    return out;
}

// Discrete L2(f^{n-1} dr dtheta) norm by the trapezoidal rule.
inline double weighted_l2(const GridFunction& v, const WarpedMetric& m)
{
    double s = 0;
    const std::size_t Nr = v.r.size(), Nt = v.theta.size();
    for (std::size_t i = 0; i < Nr; ++i) {
        double wr = 0;
        if (i > 0) wr += 0.5 * (v.r[i] - v.r[i - 1]);
        if (i + 1 < Nr) wr += 0.5 * (v.r[i + 1] - v.r[i]);
        double jac = std::pow(m.f(v.r[i]), m.n - 1);
        for (std::size_t k = 0; k < Nt; ++k) {
            double wt = Nt == 1 ? 1.0 : 0.0;
            if (k > 0) wt += 0.5 * (v.theta[k] - v.theta[k - 1]);
            if (k + 1 < Nt) wt += 0.5 * (v.theta[k + 1] - v.theta[k]);
            s += wr * wt * jac * v.at(i, k) * v.at(i, k);
        }
    }
    return std::sqrt(s);
}

} // namespace conic
