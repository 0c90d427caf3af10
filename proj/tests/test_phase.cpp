#include <cmath>
#include <cstdio>
#include <filesystem>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <gtest/gtest.h>

#include "conic/phase.hpp"

using namespace conic;

namespace {

const ChartMetric2D kFlat = flat_chart(1.0);
const ChartMetric2D kWarp = make_chart(MetricFamily::power_perturb, 0.3, 1.0, 1.0, 1.0, 0.2);

ThetaDomain domain(double R, double lo, double hi)
{
    ThetaDomain d;
    d.R = R;
    d.V_lo = lo;
    d.V_hi = hi;
    d.eps_sep = (hi - lo) + 0.05;
    return d;
}

const EikonalTable& flat_table()
{
    static EikonalTable t = build_eikonal(kFlat, domain(20, -0.1, 0.1), {});
    return t;
}

const EikonalTable& warped_table()
{
    static EikonalTable t = build_eikonal(kWarp, domain(20, 0.3, 0.5), {});
    return t;
}

} // namespace

TEST(Invert, RadialRay)
{
    auto lp = invert_lagrangian(kFlat, 30, 0.2, 1.5, 0.2);
    EXPECT_NEAR(lp.rho, 1.5, 1e-10);
    EXPECT_NEAR(lp.eta, 0, 1e-10);
    auto lw = invert_lagrangian(kWarp, 30, 0.2, 1.5, 0.2);
    EXPECT_NEAR(lw.rho, 1.5, 1e-10);
    EXPECT_NEAR(lw.eta, 0, 1e-10);
}

TEST(Invert, FlatStraightLine)
{
    auto lp = invert_lagrangian(kFlat, 10, 0, 1, 0.1);
    EXPECT_NEAR(lp.rho, 0.995004165, 1e-9);
    EXPECT_NEAR(lp.eta, 0.998334166, 1e-9);
    EXPECT_NEAR(lp.r_bar, 10 * std::cos(0.1), 1e-8);
    EXPECT_NEAR(lp.eta_bar, 10 * std::sin(0.1), 1e-9);
    // homogeneity in varrho and the incoming branch
    auto l2 = invert_lagrangian(kFlat, 10, 0, 2.5, 0.1);
    EXPECT_NEAR(l2.rho, 2.5 * std::cos(0.1), 1e-9);
    EXPECT_NEAR(l2.eta, 25 * std::sin(0.1), 1e-8);
    auto lm = invert_lagrangian(kFlat, 10, 0, -1, 0.1);
    EXPECT_NEAR(lm.rho, -std::cos(0.1), 1e-9);
    EXPECT_NEAR(lm.eta, -10 * std::sin(0.1), 1e-8);
    EXPECT_NEAR(lm.theta_bar, 0.1, 1e-10);
}

TEST(Invert, Errors)
{
    EXPECT_THROW(invert_lagrangian(kFlat, 0.5, 0, 1, 0.1), std::domain_error);
    EXPECT_THROW(invert_lagrangian(kFlat, 10, 0, 0, 0.1), std::invalid_argument);
    InvertOptions o;
    o.max_iter = 1;
    EXPECT_THROW(invert_lagrangian(kWarp, 10, 0, 1, 0.4, o, std::array<double, 2>{0.2, -3.0}), InversionError);
}

TEST(Invert, RhoExpansionQuadraticInDelta)
{
    // flat: rho_ - varrho = cos(delta) - 1, even and quadratic
    std::vector<std::pair<double, double>> s;
    for (double d : {0.01, 0.02, 0.04, 0.08}) {
        auto lp = invert_lagrangian(kWarp, 200, 0.4, 1, 0.4 + d);
        s.emplace_back(d, lp.rho - 1);
    }
    EXPECT_NEAR(power_fit(s).exponent, 2.0, 0.1);
}

TEST(Eikonal, FlatClosedForm)
{
    const auto& t = flat_table();
    EXPECT_LE(t.max_hj_residual, 1e-10);
    EXPECT_LE(t.max_circulation, 1e-6);
    EXPECT_LE(t.max_generating_residual, 1e-6);
    EXPECT_GT(t.min_dr, 0.5);
    EXPECT_LT(t.max_dr, 2.0);
    double err = 0, diag = 0;
    for (double r : geomspace(20, 2000, 40))
        for (double th : linspace(-0.1, 0.1, 20)) {
            for (double vt : linspace(-0.1, 0.1, 20)) {
                auto v = t.eval(r, th, vt);
                err = std::max(err, std::abs(v.psi - r * std::cos(th - vt)));
                err = std::max(err, std::abs(v.dtheta - r * std::sin(vt - th)));
            }
            diag = std::max(diag, std::abs(t.eval(r, th, th).psi - r));
        }
    EXPECT_LE(err, 1e-5);
    EXPECT_LE(diag, 1e-6);
}

TEST(Eikonal, SmallRadiusExample)
{
    auto t = build_eikonal(kFlat, domain(5, -0.1, 0.1), {12, 7, 7, 50});
    EXPECT_NEAR(t.eval(10, 0, 0.1).psi, 9.950042, 1e-6);
}

TEST(Eikonal, WarpedResiduals)
{
    const auto& t = warped_table();
    EXPECT_LE(t.max_hj_residual, 1e-6);
    EXPECT_LE(t.max_circulation, 1e-6);
    EXPECT_LE(t.max_generating_residual, 1e-5);
    EXPECT_GT(t.min_dr, 0.5);
    EXPECT_LT(t.max_dr, 2.0);
    // generating identity off the nodes: scattering data at d phi give (psi, vartheta, varrho, -d_vartheta phi)
    CounterRng rng(17);
    for (int i = 0; i < 6; ++i) {
        const double r = std::exp(rng.uniform(std::log(20.0), std::log(2000.0)));
        const double th = rng.uniform(0.3, 0.5), vt = rng.uniform(0.3, 0.5);
        auto v = t.eval(r, th, vt);
        auto d = scattering_map(kWarp, {r, th, v.dr, v.dtheta}, +1, InvertOptions{}.scatter);
        EXPECT_NEAR(d.r_bar, v.psi, 1e-5);
        EXPECT_NEAR(d.theta_bar, vt, 1e-8);
        EXPECT_NEAR(d.rho_bar, 1.0, 1e-8);
        EXPECT_NEAR(d.eta_bar, -v.dvartheta, 1e-5);
        // sign coherence |d_theta psi| ~ r |theta - vartheta|
        if (std::abs(th - vt) > 1e-3) {
            const double q = std::abs(v.dtheta) / (r * std::abs(th - vt));
            EXPECT_GT(q, 0.5);
            EXPECT_LT(q, 2.0);
        }
    }
}

TEST(Eikonal, DomainValidation)
{
    auto d = domain(20, -0.1, 0.1);
    d.eps_sep = 0.1;
    EXPECT_THROW(build_eikonal(kFlat, d, {}), std::invalid_argument);
    EXPECT_THROW(flat_table().eval(10, 0, 0), std::out_of_range);
}

TEST(Eikonal, TableRoundTrip)
{
    const auto& t = warped_table();
    auto dir = std::filesystem::temp_directory_path() / "conic_table_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "warped.csv").string();
    write_table(t, path);
    auto u = read_table(path);
    ASSERT_EQ(u.size(), t.size());
    EXPECT_EQ(u.metric.angular, t.metric.angular);
    for (std::size_t q = 0; q < t.size(); ++q) {
        EXPECT_EQ(u.psi[q], t.psi[q]);
        EXPECT_EQ(u.d_vartheta[q], t.d_vartheta[q]);
    }
    EXPECT_EQ(u.eval(300, 0.41, 0.37).psi, t.eval(300, 0.41, 0.37).psi);
    std::filesystem::remove_all(dir);
}

TEST(Expansions, FlatTaylor)
{
    auto rep = check_eikonal_expansions(flat_table());
    for (auto& f : rep.fits) {
        if (f.name == "psi-r:delta^2") {
            // psi - r = -r delta^2 / 2 + O(r delta^4)
            EXPECT_NEAR(f.fit.exponent, 1.0, 1e-3);
            EXPECT_NEAR(f.fit.constant, 0.5, 1e-3);
        }
        if (f.name == "psi-r:delta" || f.name == "dtheta_psi-r*gbar*delta:delta" || f.name == "rho_-varrho:delta") {
            EXPECT_TRUE(f.fit.identically_zero) << f.name;
        }
    }
    EXPECT_TRUE(rep.pass);
}

TEST(Expansions, WarpedOrders)
{
    auto rep = check_eikonal_expansions(warped_table());
    for (auto& f : rep.fits) {
        EXPECT_TRUE(f.pass) << f.name << " exponent " << f.fit.exponent << " expected " << f.expected;
        if (!f.fit.identically_zero) {
            EXPECT_NEAR(f.fit.exponent, f.expected, 0.15) << f.name;
        }
    }
    // the correction to eta_ = r varrho gbar delta is a nonzero S_0 coefficient at nu = 1
    for (auto& f : rep.fits)
        if (f.name == "eta_-r*varrho*gbar*delta:delta") {
            EXPECT_FALSE(f.fit.identically_zero);
        }
}

TEST(Expansions, EpsUniform)
{
    double c_lin[3], c_quad[3];
    int k = 0;
    for (double e : {1.0, 0.25, 1.0 / 16}) {
        auto t = build_eikonal(kWarp, domain(20, 0.3, 0.5), {12, 7, 7, 2000}, e);
        EXPECT_LE(t.max_hj_residual, 1e-6);
        auto rep = check_eikonal_expansions(t);
        for (auto& f : rep.fits) {
            if (f.name == "eta_-r*varrho*gbar*delta:delta") c_lin[k] = f.max_abs;
            if (f.name == "psi-r:delta^2") c_quad[k] = f.fit.constant;
        }
        ++k;
    }
    // bounds uniform in eps: the constants may shrink with eps, but do not grow
    for (int i = 1; i < 3; ++i) {
        EXPECT_LE(c_lin[i], 2 * c_lin[0]);
        EXPECT_LE(c_quad[i], 2 * c_quad[0]);
        EXPECT_GE(c_quad[i], 0.5 * c_quad[0]);
    }
}

TEST(Characteristic, FlatRadialAndConvergence)
{
    const auto& t = flat_table();
    auto c = characteristic(t, 30, 0.02, 1, 0.02, 200);
    EXPECT_NEAR(c.state.r, 30 + 400, 1e-8);
    EXPECT_NEAR(c.state.theta, 0.02, 1e-12);
    for (double s : {10.0, 40.0, 160.0, 640.0}) {
        auto g = characteristic(t, 30, -0.05, 1, 0.05, s);
        EXPECT_LE(g.invariance_residual, 1e-6);
        // |theta^s - vartheta| = O(<s/r>^{-1})
        EXPECT_LE(std::abs(g.state.theta - 0.05) * std::sqrt(1 + (s / 30) * (s / 30)), 0.2);
    }
    EXPECT_THROW(characteristic(t, 30, -0.05, 1, 0.05, 5000), std::out_of_range);
    EXPECT_THROW(characteristic(t, 30, -0.05, 1, 0.05, -1), std::invalid_argument);
}

TEST(Characteristic, WarpedInvariance)
{
    const auto& t = warped_table();
    for (double s : {5.0, 50.0, 500.0}) EXPECT_LE(characteristic(t, 25, 0.32, 1, 0.47, s).invariance_residual, 1e-6);
}

TEST(Transport, FlatB)
{
    TransportOptions o;
    for (double r : {20.0, 100.0, 1000.0}) {
        o.n = 2;
        EXPECT_LE(std::abs(transport_b(kFlat, r, 0.3, 1, 0.35, o)), 1e-9 / r);
        o.n = 3;
        // Delta phi picks up (n - 2) d_r phi / r = varrho cos(theta - vartheta) / r
        EXPECT_NEAR(transport_b(kFlat, r, 0.3, 2, 0.35, o), 2 * std::cos(0.05) / r, 1e-9 / r);
    }
    o.n = 2;
    EXPECT_THROW(transport_b(flat_table(), 20.01, 0, 1, 0, o), std::out_of_range);
    EXPECT_LE(std::abs(transport_b(flat_table(), 100, 0, 1, 0.05, o)), 1e-10);
}

TEST(Transport, WarpedBAtDiagonal)
{
    // on the radial ray the exact second-order coefficient gives
    // b = a nu (nu - 1) / (2 (1 + nu)) r^{-1-nu} + O(r^{-1-2 nu}) for g = 1 + a r^{-nu}
    auto m = make_chart(MetricFamily::power_perturb, 0.3, 0.5, 1.0);
    TransportOptions o;
    for (double r : {400.0, 1600.0}) {
        const double lead = 0.3 * 0.5 * (-0.5) / 3.0 * std::pow(r, -1.5);
        EXPECT_NEAR(transport_b(m, r, 0, 1, 0, o) / lead, 1.0, 0.1);
    }
}

TEST(Transport, BDecayAlongCharacteristics)
{
    auto m = make_chart(MetricFamily::power_perturb, 0.3, 0.5, 1.0, 1.0, 0.2);
    BDecaySweep sw;
    sw.r0 = {20, 60, 180};
    sw.tau = {2, 6, 18, 54};
    auto rep = fit_b_decay(m, sw);
    EXPECT_NEAR(rep.tau_exponent, -1.5, 0.2);
    EXPECT_NEAR(rep.r_exponent, -1.5, 0.2);
    EXPECT_GT(rep.C_first, 0);
    EXPECT_LT(rep.max_model_ratio, 2.0);
}

TEST(Transport, FlatTwoDimensionalIsTrivial)
{
    auto tr = solve_transport(kFlat, 30, 0.3, 1, 0.35, 1.0, nullptr);
    EXPECT_NEAR(tr.value, 1.0, 1e-8);
    EXPECT_TRUE(tr.converged);
}

TEST(Transport, FlatThreeDimensionalDiverges)
{
    TransportOptions o;
    o.n = 3;
    auto tr = solve_transport(kFlat, 30, 0.3, 1, 0.3, 1.0, nullptr, o);
    EXPECT_FALSE(tr.converged);
    // radial ray: int_0^S varrho / (r + 2 s varrho) ds = log((r + 2 S varrho) / r) / 2
    for (std::size_t k = 0; k < tr.horizons.size(); ++k)
        EXPECT_NEAR(tr.ladder_int_b[k], 0.5 * std::log((30 + 2 * tr.horizons[k]) / 30), 1e-8);
}

TEST(Transport, ShortRangeSourceGivesSymbol)
{
    const double mu = 0.5;
    auto f = [mu](double r, double) { return std::pow(1 + r * r, -(1 + mu) / 2); };
    std::vector<std::pair<double, double>> s;
    boost::math::quadrature::exp_sinh<double> quad;
    for (double r : {20.0, 40.0, 80.0, 160.0, 320.0}) {
        auto tr = solve_transport(kFlat, r, 0.3, 1, 0.35, 0.0, f);
        EXPECT_TRUE(tr.converged);
        // straight-line oracle
        const double X = r * std::cos(0.3), Y = r * std::sin(0.3), c = std::cos(0.35), sn = std::sin(0.35);
        const double exact = -quad.integrate([&](double t) { return f(std::hypot(X + 2 * t * c, Y + 2 * t * sn), 0); });
        EXPECT_NEAR(tr.value, exact, 1e-3 * std::abs(exact)) << r;
        s.emplace_back(r, tr.value);
    }
    EXPECT_NEAR(power_fit(s).exponent, -mu, 0.05);
}

TEST(Wkb, InitialConditionAndRadialExactness)
{
    auto w0 = wkb_phase(kWarp, 50, 0.9, 4, 0.0);
    for (std::size_t i = 0; i < w0.r.size(); ++i)
        for (std::size_t k = 0; k < w0.theta.size(); ++k)
            EXPECT_DOUBLE_EQ(w0.phi[i * w0.theta.size() + k], w0.r[i] * 0.9 + w0.theta[k] * 4);
    // eta = 0: phi = r rho - s rho^2 exactly
    auto w = wkb_phase(kFlat, 50, 0.9, 0, 7.0);
    EXPECT_LE(w.max_defect, 1e-8);
}

TEST(Wkb, QuadraticDefect)
{
    const double R = 100;
    std::vector<std::pair<double, double>> s;
    for (double t : {1.0, 2.0, 4.0, 8.0}) {
        auto w = wkb_phase(kWarp, R, 1.0, 20, t);
        s.emplace_back(t, w.max_defect);
        auto b = wkb_phase(kWarp, R, 1.0, 20, -t);
        EXPECT_LE(b.C_observed, 2 * w.C_observed + 1e-6);
        EXPECT_LT(w.C_observed, 50.0);
    }
    EXPECT_NEAR(power_fit(s).exponent, 2.0, 0.15);
}
