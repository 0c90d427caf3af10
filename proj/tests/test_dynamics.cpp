#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "conic/dynamics.hpp"

using namespace conic;

namespace {

const WarpedMetric& flat3()
{
    static WarpedMetric m = flat_warped(3);
    return m;
}

const WarpedMetric& warped3()
{
    static WarpedMetric m = make_warped(MetricFamily::power_perturb, 3, 0.3, 1, 1);
    return m;
}

double max_diff(const FieldState& a, const FieldState& b)
{
    double m = 0;
    for (std::size_t l = 0; l < a.coeffs.size(); ++l)
        for (std::size_t i = 0; i < a.coeffs[l].size(); ++i) m = std::max(m, std::abs(a.coeffs[l][i] - b.coeffs[l][i]));
    return m;
}

// smooth data with several angular modes
FieldState mixed_state(std::shared_ptr<const ModeBasis> b)
{
    FieldState s = zero_state(b);
    for (int l = 0; l <= b->ell_max(); ++l) {
        auto p = state_from_profile(b, l, [l](double r) {
            return cplx(std::pow(r, l) * std::exp(-0.5 * r * r), 0.3 * l * r * std::exp(-0.4 * (r - 2) * (r - 2)));
        });
        s.coeffs[l] = p.coeffs[l];
    }
    return s;
}

FieldState normalized(const FieldState& s, double norm) { return scaled(s, norm / l2_norm(s)); }

// Strang splitting with the exact pointwise phase rotation for the nonlinear part.
FieldState split_step(const FieldState& u0, double sigma, double T, int steps)
{
    const double dt = T / steps;
    const int n = u0.n();
    const auto g = make_angular_grid(n, u0.ell_max(), default_angular_nodes(n, u0.ell_max()));
    FieldState u = u0;
    for (int k = 0; k < steps; ++k) {
        u = propagate(u, 0.5 * dt, false);
        auto v = to_physical(u, g);
        for (auto& x : v) x *= std::polar(1.0, -sigma * std::pow(std::abs(x), 4.0 / n) * dt);
        u = from_physical(v, g, u);
        u = propagate(u, 0.5 * dt, false);
    }
    return u;
}

} // namespace

TEST(Propagate, GroupLawUnitarityAndReversal)
{
    for (const auto* m : {&flat3(), &warped3()}) {
        auto b = build_mode_basis(*m, 3, 60, 0.1);
        const auto u = mixed_state(b);
        const auto a = propagate(u, 0.7), c = propagate(a, 1.9), d = propagate(u, 2.6);
        EXPECT_LT(max_diff(c, d), 1e-10);
        EXPECT_NEAR(c.t, 2.6, 1e-15);
        EXPECT_NEAR(l2_norm(d), l2_norm(u), 1e-10 * l2_norm(u));
        EXPECT_LT(max_diff(propagate(conjugate(u), -1.3), conjugate(propagate(u, 1.3))), 1e-10);
        EXPECT_LT(max_diff(propagate(propagate(u, 2.0), -2.0), u), 1e-10);
    }
}

TEST(Propagate, FreeGaussianProfile)
{
    // |u(t, r)| = (1+4t^2)^{-3/4} exp(-r^2 / (2(1+4t^2))) for u0 = exp(-r^2/2)
    auto b = build_mode_basis(flat_warped(3), 0, 60, 0.05);
    const auto g = gaussian_state(b, 1);
    const auto grid = make_angular_grid(3, 0, 1);
    double worst_sup = 0, worst_profile = 0;
    for (double t = 0; t <= 5.0001; t += 0.5) {
        const auto u = propagate(g, t);
        const double s = 1 + 4 * t * t;
        worst_sup = std::max(worst_sup, std::abs(lq_norm(u, INFINITY) / std::pow(s, -0.75) - 1));
        const auto v = to_physical(u, grid);
        for (std::size_t i = 0; i < b->size(); i += 7) {
            const double r = b->r()[i];
            const double ex = std::pow(s, -0.75) * std::exp(-0.5 * r * r / s);
            worst_profile = std::max(worst_profile, std::abs(std::abs(v[i]) - ex));
        }
    }
    EXPECT_LT(worst_sup, 0.01);
    EXPECT_LT(worst_profile, 2e-3);
}

TEST(Propagate, LightConeEnforced)
{
    auto b = build_mode_basis(flat_warped(3), 0, 30, 0.1);
    const auto g = gaussian_state(b, 1);
    EXPECT_NO_THROW(propagate(g, 1));
    EXPECT_THROW(propagate(g, 50), LightConeViolation);
    EXPECT_NO_THROW(propagate(g, 50, false));
}

TEST(Dispersive, FlatAndWarpedLowBand)
{
    for (const auto* m : {&flat3(), &warped3()}) {
        auto b = build_mode_basis(*m, 0, 1000, 0.5);
        const DyadicBand band{4, LpDirection::low};
        ASSERT_DOUBLE_EQ(band.scale(), 0.25);
        const auto u0 = band_data(b, band, CutoffMode::exterior);
        const auto rep = dispersive_fit(u0, geomspace(64, 640, 12));
        EXPECT_GE(rep.decades, 1 - 1e-12);
        for (const auto& s : rep.samples) EXPECT_TRUE(s.cone_ok);
        EXPECT_LE(rep.fit.exponent, -1.3);
        EXPECT_TRUE(rep.pass);
    }
}

TEST(Dispersive, ShortWindowFlagged)
{
    auto b = build_mode_basis(flat_warped(3), 0, 60, 0.1);
    const auto rep = dispersive_fit(gaussian_state(b, 1), geomspace(1, 4, 5));
    EXPECT_TRUE(rep.window_short);
    EXPECT_FALSE(rep.pass);
    // far beyond the cone nothing is sampled
    const auto far = dispersive_fit(gaussian_state(b, 1), {100, 200});
    for (const auto& s : far.samples) EXPECT_FALSE(s.cone_ok);
}

TEST(Strichartz, Admissibility)
{
    EXPECT_NEAR(admissibility_residual(2, 6, 3), 0, 1e-15);
    EXPECT_NEAR(admissibility_residual(INFINITY, 2, 3), 0, 1e-15);
    StrichartzConfig c;
    c.p = 2;
    c.q = 2;
    try {
        strichartz_experiment(c);
        FAIL() << "inadmissible pair accepted";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("= 1"), std::string::npos) << e.what();
    }
}

TEST(Strichartz, GaussianClosedForm)
{
    // ||u(t)||_6^6 = (pi/3)^{3/2} (1+4t^2)^{-3}, so int_0^T ||u||_6^2 = (pi/3)^{1/2} atan(2T) / 2
    auto b = build_mode_basis(flat_warped(3), 0, 200, 0.05);
    const auto g = gaussian_state(b, 1);
    const double T = 40;
    const auto prof = lq_time_profile(g, 2, 6, T, 12, 20);
    for (std::size_t k = 0; k < prof.size(); ++k) {
        const double t = T / std::pow(2.0, prof.size() - 1 - k);
        const double ex = std::sqrt(std::sqrt(std::numbers::pi / 3) * std::atan(2 * t) / 2);
        EXPECT_NEAR(prof[k] / ex, 1, 2e-3) << t;
        if (k) {
            EXPECT_GE(prof[k], prof[k - 1]);
        }
    }
}

TEST(Strichartz, UnitarityPair)
{
    StrichartzConfig c;
    c.metric = warped3();
    c.p = INFINITY;
    c.q = 2;
    c.bands = {0, 3, 6};
    const auto rep = strichartz_experiment(c);
    for (const auto& b : rep.bands) EXPECT_NEAR(b.ratio, 1, 1e-10);
}

TEST(Strichartz, BandUniformity)
{
    std::vector<double> flat_ratios;
    for (const auto* m : {&flat3(), &warped3()}) {
        StrichartzConfig c;
        c.metric = *m;
        const auto rep = strichartz_experiment(c);
        ASSERT_EQ(rep.bands.size(), 9u);
        EXPECT_LE(rep.spread, 5);
        EXPECT_LT(rep.max_increment, 0.05);
        for (const auto& b : rep.bands) {
            EXPECT_TRUE(b.cone.ok);
            EXPECT_GE(b.increment, 0);
            if (m == &flat3()) flat_ratios.push_back(b.ratio);
        }
    }
    // the flat grids are exact rescalings of one another
    for (double r : flat_ratios) EXPECT_NEAR(r / flat_ratios.front(), 1, 1e-8);
}

TEST(Nls, ZeroAndLinearData)
{
    auto b = build_mode_basis(flat_warped(3), 0, 60, 0.2);
    NlsOptions o;
    o.T = 4;
    const auto zero = nls_picard(zero_state(b), o);
    EXPECT_EQ(zero.iterations, 1);
    EXPECT_TRUE(zero.converged);
    EXPECT_EQ(zero.fixed_point_residual, 0);

    const auto g = normalized(gaussian_state(b, 1), 0.5);
    o.sigma = 0;
    const auto lin = nls_picard(g, o);
    EXPECT_EQ(lin.iterations, 1);
    const auto sc = scattering_detect(lin, 3);
    for (double r : sc.plus_residuals) EXPECT_EQ(r, 0);
    for (double r : sc.minus_residuals) EXPECT_EQ(r, 0);
    EXPECT_LT(max_diff(nls_state(lin, true, lin.forward.mesh.size() - 1), propagate(g, o.T)), 1e-12);
    EXPECT_LT(max_diff(nls_state(lin, false, lin.backward.mesh.size() - 1), propagate(g, -o.T)), 1e-12);
}

TEST(Nls, MatchesSplitStep)
{
    for (const auto* m : {&flat3(), &warped3()}) {
        auto b = build_mode_basis(*m, 2, 40, 0.2);
        const auto u0 = normalized(mixed_state(b), 1.0);
        NlsOptions o;
        o.T = 2;
        o.dt = 0.25;
        const auto run = nls_picard(u0, o);
        ASSERT_TRUE(run.converged);
        const auto ref = split_step(u0, 1, o.T, 800);
        const auto got = nls_state(run, true, run.forward.mesh.size() - 1);
        const auto lin = propagate(u0, o.T);
        // the nonlinear effect itself is resolved, not just the free part
        EXPECT_GT(l2_norm(axpy(-1, lin, ref)), 1e-3);
        EXPECT_LT(l2_norm(axpy(-1, got, ref)), 1e-5);
        const auto back = nls_state(run, false, run.backward.mesh.size() - 1);
        EXPECT_LT(l2_norm(axpy(-1, back, conjugate(split_step(conjugate(u0), 1, o.T, 800)))), 1e-5);
    }
}

TEST(Nls, SmallDataConvergenceMassAndResidual)
{
    auto b = build_mode_basis(warped3(), 1, 160, 0.25);
    auto u0 = normalized(mixed_state(b), 1e-2);
    NlsOptions o;
    o.T = 16;
    const auto run = nls_picard(u0, o);
    EXPECT_TRUE(run.converged);
    EXPECT_FALSE(run.diverged);
    EXPECT_LE(run.iterations, 12);
    EXPECT_LT(run.mass_drift, 10 * o.tol);
    EXPECT_LT(nls_pde_residual(run), 10 * o.tol);
    EXPECT_GT(run.x_norm, 0);
}

TEST(Nls, ContractionExponent)
{
    auto b = build_mode_basis(flat_warped(3), 0, 160, 0.25);
    const auto g = gaussian_state(b, 2);
    std::vector<std::pair<double, double>> pts;
    NlsOptions o;
    o.T = 16;
    for (double d : {1e-2, 5e-3, 2.5e-3}) {
        const auto run = nls_picard(normalized(g, d), o);
        ASSERT_FALSE(run.contraction.empty());
        pts.emplace_back(d, run.contraction.front());
    }
    EXPECT_NEAR(power_fit(pts).exponent, 4.0 / 3, 0.2);
}

TEST(Nls, LargeDataDiverges)
{
    auto b = build_mode_basis(flat_warped(3), 0, 160, 0.25);
    NlsOptions o;
    o.T = 16;
    o.max_iter = 12;
    const auto run = nls_picard(normalized(gaussian_state(b, 2), 10), o);
    EXPECT_TRUE(run.diverged);
    EXPECT_FALSE(run.converged);
    EXPECT_FALSE(scattering_detect(run, 4).cauchy);
}

TEST(Scattering, ChirpedLadder)
{
    // data refocusing at t = 2: after the focus the forward ladder shrinks faster than 1/T,
    // the backward one approaches the 1/T rate from below
    auto b = build_mode_basis(flat_warped(3), 0, 250, 0.25);
    const auto u0 = normalized(gaussian_state(b, 2, -2), 1e-2);
    NlsOptions o;
    o.T = 32;
    const auto run = nls_picard(u0, o);
    ASSERT_TRUE(run.converged);
    const auto sc = scattering_detect(run, 3);
    EXPECT_GE(sc.min_plus_factor, 2);
    EXPECT_GT(sc.min_minus_factor, 1.1);
    EXPECT_LT(sc.min_minus_factor, 2);
    EXPECT_THROW(scattering_detect(run, 7), std::invalid_argument);
}
