#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace conic {

// Power-law fit |value| ~ constant * r^exponent.
struct DecayFit {
    double exponent = std::numeric_limits<double>::quiet_NaN();
    double constant = 0.0;
    double residual = 0.0;
    bool identically_zero = false;
    std::size_t samples = 0;
};

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
};

inline LineFit least_squares_line(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("least_squares_line: need at least two paired samples");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0) throw std::invalid_argument("least_squares_line: degenerate abscissae");
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    return f;
}

// Log-log fit without the sampling preconditions; zero samples are dropped.
inline DecayFit power_fit(const std::vector<std::pair<double, double>>& samples)
{
    std::vector<double> lx, ly;
    for (auto [r, v] : samples) {
        if (r <= 0) throw std::invalid_argument("power_fit: abscissa must be positive");
        if (std::abs(v) > 0 && std::isfinite(v)) {
            lx.push_back(std::log(r));
            ly.push_back(std::log(std::abs(v)));
        }
    }
    DecayFit out;
    out.samples = samples.size();
    if (lx.empty()) {
        out.identically_zero = true;
        return out;
    }
    if (lx.size() < 2) throw std::invalid_argument("power_fit: fewer than two nonzero samples");
    auto lf = least_squares_line(lx, ly);
    out.exponent = lf.slope;
    out.constant = std::exp(lf.intercept);
    double worst = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        double model = std::exp(lf.intercept + lf.slope * lx[i]);
        worst = std::max(worst, std::abs(std::exp(ly[i]) / model - 1.0));
    }
    out.residual = worst;
    return out;
}

// j is the derivative order the samples represent; it is carried for reporting only.
inline DecayFit symbol_decay_fit(const std::vector<std::pair<double, double>>& samples, int j = 0)
{
    (void)j;
    if (samples.size() < 8) throw std::invalid_argument("symbol_decay_fit: need at least 8 samples");
    double rmin = std::numeric_limits<double>::infinity(), rmax = 0;
    bool all_zero = true;
    for (auto [r, v] : samples) {
        if (!(r > 0)) throw std::invalid_argument("symbol_decay_fit: radii must be positive");
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
        if (v != 0) all_zero = false;
    }
    if (all_zero) {
        DecayFit z;
        z.identically_zero = true;
        z.samples = samples.size();
        return z;
    }
    if (rmax / rmin < 100.0 * (1 - 1e-12))
        throw std::invalid_argument("symbol_decay_fit: radii must span two decades");
    for (auto [r, v] : samples)
        if (v == 0) throw std::invalid_argument("symbol_decay_fit: sample values must be nonzero");
    return power_fit(samples);
}

inline std::vector<double> geomspace(double a, double b, std::size_t n)
{
    std::vector<double> out(n);
    if (n == 1) {
        out[0] = a;
        return out;
    }
    const double la = std::log(a), lb = std::log(b);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = std::exp(la + (lb - la) * static_cast<double>(i) / static_cast<double>(n - 1));
    out.front() = a;
    out.back() = b;
    return out;
}

inline std::vector<double> linspace(double a, double b, std::size_t n)
{
    std::vector<double> out(n);
    if (n == 1) {
        out[0] = a;
        return out;
    }
    for (std::size_t i = 0; i < n; ++i)
        out[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
    return out;
}

} // namespace conic
