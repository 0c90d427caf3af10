#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

namespace conic {

enum class OdeStatus { ok, domain_exit, step_underflow, too_many_steps };

template <std::size_t N>
struct OdeRun {
    OdeStatus status = OdeStatus::ok;
    std::vector<std::array<double, N>> states; // one per requested stop
    double t_fail = 0.0;                       // time of failure when status != ok
    std::size_t steps = 0;
    std::size_t rejected = 0;
};

struct OdeOptions {
    double rtol = 1e-10;
    double atol = 1e-10;
    std::size_t max_steps = 2000000;
};

namespace dp {
// Dormand-Prince 5(4) tableau
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;
} // namespace dp

// Integrates y' = rhs(t, y) from t0 through each of the (monotone) stops and records the
// state there. guard(t, y) returning false aborts with domain_exit.
template <std::size_t N, class Rhs, class Guard>
OdeRun<N> integrate_stops(Rhs&& rhs, std::array<double, N> y, double t0, const std::vector<double>& stops,
                          const OdeOptions& opt, Guard&& guard)
{
    using V = std::array<double, N>;
    OdeRun<N> run;
    if (stops.empty()) return run;
    const double tend = stops.back();
    const double dir = tend >= t0 ? 1.0 : -1.0;
    double t = t0;
    std::size_t next = 0;
    while (next < stops.size() && stops[next] == t0) {
        run.states.push_back(y);
        ++next;
    }
    if (next == stops.size()) return run;

    auto axpy = [](V& out, const V& base, double h, std::initializer_list<std::pair<double, const V*>> terms) {
        for (std::size_t i = 0; i < N; ++i) {
            double s = 0;
            for (auto& [c, k] : terms) s += c * (*k)[i];
            out[i] = base[i] + h * s;
        }
    };
    auto scale = [&](std::size_t, double a, double b) {
        return opt.atol + opt.rtol * std::max(std::abs(a), std::abs(b));
    };

    V k1 = rhs(t, y);
    // initial step (Hairer, Norsett, Wanner II.4)
    double d0 = 0, d1 = 0;
    for (std::size_t i = 0; i < N; ++i) {
        double sc = scale(i, y[i], y[i]);
        d0 = std::max(d0, std::abs(y[i]) / sc);
        d1 = std::max(d1, std::abs(k1[i]) / sc);
    }
    double h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h = std::min(h, std::abs(stops[next] - t));
    {
        V y1;
        for (std::size_t i = 0; i < N; ++i) y1[i] = y[i] + dir * h * k1[i];
        V f1 = rhs(t + dir * h, y1);
        double d2 = 0;
        for (std::size_t i = 0; i < N; ++i) d2 = std::max(d2, std::abs(f1[i] - k1[i]) / scale(i, y[i], y[i]));
        d2 /= h;
        double h1 = std::max(d1, d2) <= 1e-15 ? std::max(1e-6, h * 1e-3) : std::pow(0.01 / std::max(d1, d2), 0.2);
        h = std::min(100 * h, h1);
    }
    h = std::max(h, 1e-14 * std::max(1.0, std::abs(t)));

    V k2, k3, k4, k5, k6, k7, tmp, ynew;
    while (next < stops.size()) {
        if (run.steps + run.rejected >= opt.max_steps) {
            run.status = OdeStatus::too_many_steps;
            run.t_fail = t;
            return run;
        }
        const double target = stops[next];
        bool clipped = false;
        double hs = h;
        if (std::abs(target - t) <= hs * (1 + 1e-12)) {
            hs = std::abs(target - t);
            clipped = true;
        }
        const double hh = dir * hs;
        axpy(tmp, y, hh, {{dp::a21, &k1}});
        k2 = rhs(t + dp::c2 * hh, tmp);
        axpy(tmp, y, hh, {{dp::a31, &k1}, {dp::a32, &k2}});
        k3 = rhs(t + dp::c3 * hh, tmp);
        axpy(tmp, y, hh, {{dp::a41, &k1}, {dp::a42, &k2}, {dp::a43, &k3}});
        k4 = rhs(t + dp::c4 * hh, tmp);
        axpy(tmp, y, hh, {{dp::a51, &k1}, {dp::a52, &k2}, {dp::a53, &k3}, {dp::a54, &k4}});
        k5 = rhs(t + dp::c5 * hh, tmp);
        axpy(tmp, y, hh, {{dp::a61, &k1}, {dp::a62, &k2}, {dp::a63, &k3}, {dp::a64, &k4}, {dp::a65, &k5}});
        k6 = rhs(t + hh, tmp);
        axpy(ynew, y, hh, {{dp::b1, &k1}, {dp::b3, &k3}, {dp::b4, &k4}, {dp::b5, &k5}, {dp::b6, &k6}});
        k7 = rhs(t + hh, ynew);
        double err = 0;
        bool finite = true;
        for (std::size_t i = 0; i < N; ++i) {
            double e = hh * (dp::e1 * k1[i] + dp::e3 * k3[i] + dp::e4 * k4[i] + dp::e5 * k5[i] + dp::e6 * k6[i] +
                             dp::e7 * k7[i]);
            if (!std::isfinite(ynew[i]) || !std::isfinite(e)) finite = false;
            err = std::max(err, std::abs(e) / scale(i, y[i], ynew[i]));
        }
        if (!finite) err = 1e10;
        if (err <= 1.0) {
            const double tnew = clipped ? target : t + hh;
            if (!guard(tnew, ynew)) {
                // shrink the step to localize the exit time
                if (hs > 1e-9 * std::max(1.0, std::abs(t))) {
                    h = 0.5 * hs;
                    ++run.rejected;
                    continue;
                }
                run.status = OdeStatus::domain_exit;
                run.t_fail = tnew;
                return run;
            }
            t = tnew;
            y = ynew;
            k1 = k7;
            ++run.steps;
            if (clipped) {
                run.states.push_back(y);
                ++next;
            }
            double fac = err == 0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
            // a clipped step does not indicate the natural step size
            h = clipped ? std::max(h, hs * fac) : hs * fac;
        } else {
            ++run.rejected;
            h = hs * std::clamp(0.9 * std::pow(err, -0.2), 0.1, 0.9);
        }
        if (h < 1e-14 * std::max(1.0, std::abs(t))) {
            run.status = OdeStatus::step_underflow;
            run.t_fail = t;
            return run;
        }
    }
    return run;
}

template <std::size_t N, class Rhs>
OdeRun<N> integrate_stops(Rhs&& rhs, std::array<double, N> y, double t0, const std::vector<double>& stops,
                          const OdeOptions& opt)
{
    return integrate_stops<N>(rhs, y, t0, stops, opt, [](double, const std::array<double, N>&) { return true; });
}

} // namespace conic
