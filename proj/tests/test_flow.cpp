#include <chrono>
#include <cmath>

#include <gtest/gtest.h>

#include "conic/flow.hpp"

using namespace conic;

namespace {

// free motion x(s) = x0 + 2 s xi in Cartesian coordinates
PhasePoint straight_line(const PhasePoint& x, double s)
{
    const double c = std::cos(x.theta), sn = std::sin(x.theta);
    const double X = x.r * c, Y = x.r * sn;
    const double xi1 = x.rho * c - x.eta / x.r * sn, xi2 = x.rho * sn + x.eta / x.r * c;
    const double Xs = X + 2 * s * xi1, Ys = Y + 2 * s * xi2;
    PhasePoint y;
    y.r = std::hypot(Xs, Ys);
    y.theta = x.theta + std::atan2(-sn * Xs + c * Ys, c * Xs + sn * Ys);
    y.rho = (Xs * xi1 + Ys * xi2) / y.r;
    y.eta = Xs * xi2 - Ys * xi1;
    return y;
}

const ChartMetric2D kFlat = flat_chart(1.0);
const ChartMetric2D kWarp = make_chart(MetricFamily::power_perturb, 0.3, 1.0, 1.0, 1.0);

} // namespace

TEST(Symbol, Examples)
{
    EXPECT_DOUBLE_EQ(principal_symbol(kFlat, {10, 0, 1, 5}), 1.25);
    EXPECT_DOUBLE_EQ(principal_symbol(kWarp, {10, 0, 0.7, 0}), 0.49);
    auto pow1 = make_chart(MetricFamily::power_perturb, 1.0, 1.0, 1.0);
    const double br = japanese(10.0);
    EXPECT_NEAR(principal_symbol(pow1, {10, 0, 1, 5}), 1 + (1 + 1 / br) * 0.25, 1e-15);
}

TEST(Flow, RadialRay)
{
    auto y = integrate_flow(kFlat, {10, 0, 1, 0}, 3.0);
    EXPECT_NEAR(y.r, 16, 1e-12);
    EXPECT_EQ(y.theta, 0);
    EXPECT_NEAR(y.rho, 1, 1e-15);
    EXPECT_EQ(y.eta, 0);
}

TEST(Flow, CartesianOracle)
{
    auto y = integrate_flow(kFlat, {10, 0, 1, 5}, 1.0);
    EXPECT_NEAR(y.r, std::sqrt(145.0), 1e-9);
    EXPECT_NEAR(y.theta, std::atan2(1.0, 12.0), 1e-10);
    EXPECT_NEAR(y.rho, 12.5 / std::sqrt(145.0), 1e-10);
    EXPECT_NEAR(y.eta, 5, 1e-9);
    auto z = integrate_flow(kWarp, {10, 0.3, -0.2, 4}, 0.0);
    EXPECT_EQ(z.r, 10);
    EXPECT_EQ(z.eta, 4);
}

TEST(Flow, RandomStrongOutgoingAgainstStraightLines)
{
    ConicRegion reg{RegionKind::strongly_outgoing, 20, -1, 1, 0.5, 2, 0.3, 1};
    CounterRng rng(2024);
    double worst = 0;
    for (int i = 0; i < 200; ++i) {
        auto x = sample_region(reg, kFlat, rng);
        const double s = rng.uniform(0, 20 * x.r);
        auto y = integrate_flow(kFlat, x, s);
        auto o = straight_line(x, s);
        worst = std::max({worst, std::abs(y.r - o.r) / o.r, std::abs(y.theta - o.theta),
                          std::abs(y.rho - o.rho) / std::abs(o.rho), std::abs(y.eta - o.eta) / (std::abs(o.eta) + x.r)});
    }
    EXPECT_LE(worst, 1e-8);
}

TEST(Flow, EnergyConservation)
{
    CounterRng rng(7);
    ConicRegion reg{RegionKind::outgoing, 20, -1, 1, 0.5, 2, -0.5, 1};
    for (auto m : {kFlat, kWarp, make_chart(MetricFamily::power_perturb, 0.3, 1.0, 1.0, 1.0, 0.3)}) {
        for (int i = 0; i < 20; ++i) {
            auto x = sample_region(reg, m, rng);
            const double tol = 1e-10, s = 50;
            auto y = integrate_flow(m, x, s, tol);
            EXPECT_LE(std::abs(principal_symbol(m, y) - principal_symbol(m, x)), 10 * tol * s);
        }
    }
}

TEST(Flow, DomainExitReported)
{
    try {
        integrate_flow(kFlat, {10, 0, -1, 0}, 10.0);
        FAIL() << "expected a domain exit";
    } catch (const FlowError& e) {
        EXPECT_EQ(e.status, OdeStatus::domain_exit);
        EXPECT_GT(e.time, 4.0);
        EXPECT_LT(e.time, 4.6);
    }
}

TEST(Flow, Homogeneity)
{
    PhasePoint x{30, 0.2, 0.6, 9};
    for (double lam : {2.0, -1.0}) {
        PhasePoint xl{x.r, x.theta, lam * x.rho, lam * x.eta};
        const double s = 7.0;
        auto a = integrate_flow(kWarp, xl, s, 1e-12);
        auto b = integrate_flow(kWarp, x, lam * s, 1e-12);
        EXPECT_NEAR(a.r, b.r, 1e-8 * b.r);
        EXPECT_NEAR(a.theta, b.theta, 1e-9);
        EXPECT_NEAR(a.rho, lam * b.rho, 1e-9);
        EXPECT_NEAR(a.eta, lam * b.eta, 1e-8);
    }
}

TEST(Flow, FlatAngularMomentumConserved)
{
    auto y = integrate_flow(kFlat, {15, -0.4, 0.3, -7}, 200);
    EXPECT_NEAR(y.eta, -7, 1e-8);
    auto w = integrate_flow(kWarp, {15, -0.4, 0.3, -7}, 200);
    EXPECT_NEAR(w.eta, -7, 1e-8); // g independent of theta
}

TEST(Scatter, FlatOracle)
{
    auto d = scattering_map(kFlat, {10, 0, 1, 5}, +1);
    EXPECT_NEAR(d.rho_bar, std::sqrt(1.25), 1e-6);
    EXPECT_NEAR(d.theta_bar, std::atan2(0.5, 1.0), 1e-6);
    EXPECT_NEAR(d.eta_bar, 5, 1e-6);
    EXPECT_NEAR(d.r_bar, 10 / std::sqrt(1.25), 1e-6 * 10);
    EXPECT_TRUE(d.converged);
    EXPECT_LT(d.extrapolation_error, 1e-5);
}

TEST(Scatter, RadialDataIsFixed)
{
    for (auto m : {kFlat, kWarp}) {
        PhasePoint x{25, 0.3, 0.8, 0};
        auto d = scattering_map(m, x, +1);
        EXPECT_EQ(d.r_bar, 25);
        EXPECT_EQ(d.theta_bar, 0.3);
        EXPECT_EQ(d.rho_bar, 0.8);
        EXPECT_EQ(d.eta_bar, 0);
    }
}

TEST(Scatter, SignSymmetry)
{
    PhasePoint x{40, 0.1, 0.7, 12};
    auto p = scattering_map(kWarp, x, +1);
    auto m = scattering_map(kWarp, {x.r, x.theta, -x.rho, -x.eta}, -1);
    EXPECT_NEAR(p.r_bar, m.r_bar, 1e-7 * x.r);
    EXPECT_NEAR(p.theta_bar, m.theta_bar, 1e-9);
    EXPECT_NEAR(p.rho_bar, -m.rho_bar, 1e-9);
    EXPECT_NEAR(p.eta_bar, -m.eta_bar, 1e-7);
}

TEST(Scatter, FirstOrderAngle)
{
    // varthetabar - theta - gbar^{-1} eta/(r rho) = O(r^{-nu} |eta/r|) + O(|eta/r|^2)
    auto m = kWarp;
    for (double r : {50.0, 200.0, 800.0}) {
        std::vector<std::pair<double, double>> pts;
        for (double k : {0.004, 0.008, 0.016, 0.032}) {
            PhasePoint x{r, 0.0, 1.0, k * r};
            auto d = scattering_map(m, x, +1);
            const double lead = x.eta / (x.r * x.rho);
            pts.emplace_back(k, std::abs(d.theta_bar - x.theta - lead));
            EXPECT_LE(std::abs(d.theta_bar - x.theta - lead), 3.0 * (k / r + k * k)) << r << " " << k;
        }
    }
}

TEST(Scatter, ExpansionOrdersInEtaOverR)
{
    // varrhobar - rho and (rbar - r)/r are O(|eta/r|^2)
    for (auto m : {kFlat, kWarp}) {
        std::vector<std::pair<double, double>> a, b;
        for (double k : {0.005, 0.01, 0.02, 0.04, 0.08}) {
            PhasePoint x{100, 0.0, 1.0, k * 100};
            auto d = scattering_map(m, x, +1);
            a.emplace_back(k, d.rho_bar - x.rho);
            b.emplace_back(k, (d.r_bar - x.r) / x.r);
        }
        EXPECT_NEAR(power_fit(a).exponent, 2.0, 0.15);
        EXPECT_NEAR(power_fit(b).exponent, 2.0, 0.15);
    }
}

TEST(Region, Examples)
{
    ConicRegion strong{RegionKind::strongly_outgoing, 10, -1, 1, 0.5, 2, 0.3, 1};
    EXPECT_TRUE(region_contains(strong, kFlat, {100, 0, 1, 0}));
    EXPECT_FALSE(region_contains(strong, kFlat, {100, 0, -1, 0}));
    ConicRegion weak{RegionKind::outgoing, 10, -1, 1, 0.05, 2, 0.0, 1};
    EXPECT_TRUE(region_contains(weak, kFlat, {100, 0, 0.1, 30}));
    // boundary excluded
    ConicRegion w2{RegionKind::outgoing, 10, -1, 1, 0.5, 2, 0.6, 1};
    EXPECT_FALSE(region_contains(w2, kFlat, {100, 0, 0.6, 80}));
    EXPECT_FALSE(region_contains(w2, kFlat, {10, 0, 1, 0}));
}

TEST(Region, SymmetryBetweenOutgoingAndIncoming)
{
    ConicRegion out{RegionKind::outgoing, 10, -1, 1, 0.5, 2, 0.2, 1};
    ConicRegion in = out;
    in.kind = RegionKind::incoming;
    CounterRng rng(3);
    for (int i = 0; i < 200; ++i) {
        PhasePoint x{rng.uniform(5, 60), rng.uniform(-1.2, 1.2), rng.uniform(-1.5, 1.5), rng.uniform(-40, 40)};
        PhasePoint y{x.r, x.theta, -x.rho, -x.eta};
        EXPECT_EQ(region_contains(out, kWarp, x), region_contains(in, kWarp, y));
    }
}

TEST(LowerBound, FlatWeakRegion)
{
    ConicRegion reg{RegionKind::outgoing, 20, -1, 1, 0.5, 2, 0.0, 1};
    auto rep = verify_flow_lower_bound(kFlat, reg, 40, 2000, 5);
    EXPECT_TRUE(rep.pass);
    // rho >= 0 gives (rbar^s)^2 >= r^2 + 4 s^2 p >= (r + s p^{1/2})^2 / 2
    EXPECT_GE(rep.c_observed, std::sqrt(0.5) * (1 - 1e-8));
}

TEST(LowerBound, StrongOutgoingAndNegativeControl)
{
    ConicRegion reg{RegionKind::strongly_outgoing, 20, -1, 1, 0.5, 2, 0.3, 1};
    auto rep = verify_flow_lower_bound(kFlat, reg, 40, 2000, 6);
    EXPECT_TRUE(rep.pass);
    EXPECT_GE(rep.c_observed, 0.9);
    auto warped = verify_flow_lower_bound(kWarp, reg, 20, 2000, 6);
    EXPECT_TRUE(warped.pass);
    // nearly radial infall reaches R_M
    ConicRegion in{RegionKind::strongly_incoming, 20, -1, 1, 0.5, 2, 0.05, 1};
    auto bad = verify_flow_lower_bound(kFlat, in, 30, 2000, 6, 1e-10, +1);
    EXPECT_FALSE(bad.pass);
    EXPECT_GT(bad.failures, 0u);
}

TEST(Threshold, FlatOracle)
{
    // exact free-motion time for rho^s/p^{1/2} to reach 1 - eps^2 from rho/p^{1/2} = c0
    const double eps2 = 0.1, target = 1 - eps2;
    for (double c0 : {-0.5, 0.0, 0.5}) {
        PhasePoint x{50, 0, c0, 50 * std::sqrt(1 - c0 * c0)};
        double s = outgoing_time(kFlat, x, +1, target, 1e-11);
        // solve (r c0 + 2 s)/sqrt(r^2 + 4 s r c0 + 4 s^2) = target
        double lo = 0, hi = 1e6;
        for (int it = 0; it < 200; ++it) {
            double mid = 0.5 * (lo + hi);
            double f = (x.r * c0 + 2 * mid) / std::sqrt(x.r * x.r + 4 * mid * x.r * c0 + 4 * mid * mid);
            (f > target ? hi : lo) = mid;
        }
        EXPECT_NEAR(s, hi, 1e-7 * hi) << c0;
        // the integrated-inequality bound from the proof dominates the exact time
        const double bound = (std::exp(2 * (std::atanh(target) - std::atanh(c0))) - 1) / 2;
        EXPECT_LE(s / x.r, bound * (1 + 1e-9));
    }
}

TEST(Threshold, Report)
{
    ConicRegion reg{RegionKind::outgoing, 20, -1, 1, 0.5, 2, 0.0, 1};
    auto rep = verify_outgoing_threshold(kFlat, reg, std::sqrt(0.1), 12, 9);
    EXPECT_TRUE(rep.pass);
    EXPECT_GT(rep.T_observed, 0);
    EXPECT_LT(rep.T_observed, (std::exp(2 * std::atanh(0.9)) - 1) / 2);
    ConicRegion strong{RegionKind::strongly_outgoing, 20, -1, 1, 0.5, 2, std::sqrt(0.05), 1};
    auto zero = verify_outgoing_threshold(kFlat, strong, std::sqrt(0.1), 8, 9);
    for (double s : zero.s_star) EXPECT_EQ(s, 0.0);
    // monotone in sigma
    double prev = 1e300;
    for (double sig : {0.0, 0.4, 0.8}) {
        PhasePoint x{60, 0, sig + 1e-3, 60 * std::sqrt(1 - (sig + 1e-3) * (sig + 1e-3))};
        double t = outgoing_time(kFlat, x, +1, 0.9, 1e-11);
        EXPECT_LT(t, prev);
        prev = t;
    }
}

TEST(DerivativeBounds, FlatClosedFormAndDecay)
{
    DerivativeSweep sw;
    sw.samples = 8;
    auto rep = verify_flow_derivative_bounds(kFlat, sw);
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(rep.d_r[k].exponent, -1.0, 0.05) << k;
    EXPECT_LT(rep.C_two_sided, 3.0);
    // closed form of (rbar^s - r - 2 s rho)/s is bounded
    for (double r : {10.0, 100.0, 1000.0}) {
        PhasePoint x{r, 0, 0.8, 0.6 * r};
        for (double s : {0.1 * r, r, 10 * r}) {
            auto q = flow_quantities(kFlat, x, s, 1e-12);
            const double p = 1.0;
            const double exact = (std::sqrt(r * r + 4 * s * r * x.rho + 4 * s * s * p) - r - 2 * s * x.rho) / s;
            EXPECT_NEAR(q[0], exact, 1e-8);
            EXPECT_LE(std::abs(q[0]), 2.0);
        }
    }
    PhasePoint radial{80, 0, 1, 0};
    EXPECT_NEAR(flow_quantities(kFlat, radial, 40, 1e-12)[0], 0.0, 1e-13);
}

TEST(DerivativeBounds, Perturbed)
{
    DerivativeSweep sw;
    sw.samples = 8;
    auto rep = verify_flow_derivative_bounds(kWarp, sw);
    for (int k = 0; k < 4; ++k) EXPECT_LE(rep.d_r[k].exponent, -0.9) << k;
    EXPECT_TRUE(rep.pass);
}
