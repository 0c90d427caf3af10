#include <cmath>
#include <complex>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "conic/oscillatory.hpp"

using namespace conic;

namespace {

ThetaDomain wide_domain()
{
    ThetaDomain d;
    d.R = 20;
    d.V_lo = -0.3;
    d.V_hi = 0.3;
    d.eps_sep = 0.65;
    return d;
}

const EikonalTable& flat()
{
    static EikonalTable t = build_eikonal(flat_chart(1.0), wide_domain(), {});
    return t;
}

const EikonalTable& warped()
{
    static EikonalTable t = build_eikonal(make_chart(MetricFamily::power_perturb, 0.3, 1.0, 1.0), wide_domain(), {});
    return t;
}

// nested adaptive Gauss-Kronrod over the flat closed-form phase
cplx adaptive_flat_kernel(const FioKernelSpec& k, double s, const KernelPoint& p)
{
    using boost::math::quadrature::gauss_kronrod;
    const auto& sp = k.support;
    const double vlo = std::max(p.theta - sp.eps, p.theta_prime - sp.eps_prime);
    const double vhi = std::min(p.theta + sp.eps, p.theta_prime + sp.eps_prime);
    auto part = [&](bool imag) {
        auto outer = [&](double vt) {
            const double dpsi = p.r * std::cos(p.theta - vt) - p.r_prime * std::cos(p.theta_prime - vt);
            auto inner = [&](double vr) {
                const cplx z = k.amplitude(p.r, p.theta, p.r_prime, p.theta_prime, vr, vt) *
                               std::polar(1.0, (vr * dpsi - s * vr * vr) / k.h);
                return imag ? z.imag() : z.real();
            };
            return gauss_kronrod<double, 31>::integrate(inner, sp.varrho_lo(), sp.varrho_hi(), 12, 1e-10);
        };
        return gauss_kronrod<double, 31>::integrate(outer, vlo, vhi, 12, 1e-10);
    };
    return cplx(part(false), part(true)) / std::pow(2 * std::numbers::pi * k.h, 2);
}

} // namespace

TEST(Kernel, AdaptiveQuadratureOracle)
{
    auto k = make_kernel_spec(flat(), 1.0);
    // near-stationary configurations, where |I| is not small
    for (auto [s, p] : {std::pair{0.0, KernelPoint{50, 0.03, 49, 0.0}}, std::pair{3.0, KernelPoint{52.5, 0.0, 45, 0.01}}}) {
        const cplx v = eval_kernel(k, s, p).value;
        const cplx o = adaptive_flat_kernel(k, s, p);
        EXPECT_LE(std::abs(v - o), 1e-6 * std::abs(o)) << s;
    }
    k.h = 0.25;
    const KernelPoint p{62.5, 0.02, 50, 0.0};
    const cplx v = eval_kernel(k, 5.0, p).value, o = adaptive_flat_kernel(k, 5.0, p);
    EXPECT_LE(std::abs(v - o), 1e-6 * std::abs(o));
}

TEST(Kernel, ZeroAmplitude)
{
    auto k = make_kernel_spec(flat(), 0.5);
    k.amplitude = [](double, double, double, double, double, double) { return cplx{0, 0}; };
    EXPECT_EQ(eval_kernel(k, 2, {40, 0, 30, 0}).value, cplx(0, 0));
}

TEST(Kernel, DiagonalIsAmplitudeMass)
{
    for (const EikonalTable* t : {&flat(), &warped()}) {
        auto k = make_kernel_spec(*t, 0.5);
        auto v = eval_kernel(k, 0, {70, 0.1, 70, 0.1});
        // on the diagonal the bump amplitude separates
        using boost::math::quadrature::gauss_kronrod;
        const double m_rho = gauss_kronrod<double, 31>::integrate([](double x) { return bump((x - 1.25) / 0.75); }, 0.5, 2.0, 15, 1e-13);
        const double m_vt = gauss_kronrod<double, 31>::integrate([](double x) { return std::pow(bump(x / 0.1), 2); }, -0.1, 0.1, 15, 1e-13);
        const double mass = m_rho * m_vt / std::pow(2 * std::numbers::pi * 0.5, 2);
        // the doubling criterion is 1e-4, so agreement is checked at 1e-5
        EXPECT_NEAR(v.value.real(), mass, 1e-5 * mass);
        EXPECT_NEAR(v.value.imag(), 0, 1e-12);
    }
}

TEST(Kernel, ErrorsReportedBeforeEvaluation)
{
    auto k = make_kernel_spec(flat(), 1.0 / 64);
    QuadSpec q;
    q.panels_rho = q.panels_vartheta = 1;
    EXPECT_THROW(eval_kernel(k, 0, {400, 0, 40, 0}, q), NyquistError);
    k.h = 1;
    EXPECT_THROW(eval_kernel(k, 0, {10, 0, 40, 0}), std::invalid_argument);
    // vartheta support [theta - eps, .] would leave the table
    EXPECT_THROW(eval_kernel(k, 0, {40, -0.25, 40, -0.25}), std::invalid_argument);
    // disjoint angular supports: exactly zero
    EXPECT_EQ(eval_kernel(k, 0, {40, 0.2, 40, -0.2}).value, cplx(0, 0));
}

TEST(Kernel, QuadratureConverges)
{
    auto k = make_kernel_spec(warped(), 0.125);
    auto v = eval_kernel(k, 4, {60, 0.05, 40, 0.0});
    EXPECT_TRUE(v.converged);
    EXPECT_LT(v.rel_change, 1e-4);
    EXPECT_GE(double(v.n_rho), v.nyquist_rho);
    EXPECT_GE(double(v.n_vartheta), v.nyquist_vartheta);
}

TEST(Kernel, ConjugationSymmetry)
{
    auto k = make_kernel_spec(warped(), 0.5);
    auto base = k.amplitude;
    k.amplitude = [base](double r, double th, double rp, double thp, double vr, double vt) {
        return base(r, th, rp, thp, vr, vt) * std::polar(1.0, 0.3 * r - 0.1 * rp + 2 * vr + 5 * vt + th);
    };
    FioKernelSpec kc = k;
    kc.amplitude = [a = k.amplitude](double r, double th, double rp, double thp, double vr, double vt) {
        return std::conj(a(rp, thp, r, th, vr, vt));
    };
    const KernelPoint p{55, 0.04, 42, -0.03}, q{42, -0.03, 55, 0.04};
    for (double s : {0.0, 1.5, -2.0}) {
        const cplx a = eval_kernel(k, s, p).value;
        const cplx b = std::conj(eval_kernel(kc, -s, q).value);
        EXPECT_LE(std::abs(a - b), 1e-8 * std::abs(a)) << s;
    }
}

TEST(Kernel, StationaryPhaseLeadingTerm)
{
    // flat: |I| ~ A(varrho0, vartheta0) / (4 pi |hs| varrho0) once |s| eps^2 / h >> 1
    auto k = make_kernel_spec(flat(), 0.125, 0.3, 0.3);
    const double rho0 = 1.25;
    for (double s : {32.0, 128.0}) {
        const double lead = 1 / (4 * std::numbers::pi * 0.125 * s * rho0);
        EXPECT_NEAR(std::abs(eval_kernel(k, s, {40 + 2 * s * rho0, 0, 40, 0}).value) / lead, 1.0, 0.03);
        EXPECT_NEAR(std::abs(eval_kernel(k, -s, {40, 0, 40 + 2 * s * rho0, 0}).value) / lead, 1.0, 0.03);
    }
}

TEST(Nonstationary, RadialSeparation)
{
    for (const EikonalTable* t : {&flat(), &warped()}) {
        auto rep = nonstationary_scan(make_kernel_spec(*t, 1.0), default_nonstationary_scan(NonstationaryRegime::radial_sep));
        EXPECT_LE(rep.h_fit.exponent, -3);
        EXPECT_LE(rep.spatial_fit.exponent, -3);
        EXPECT_TRUE(rep.pass);
    }
}

TEST(Nonstationary, AngularSeparationAndStationaryControl)
{
    auto k = make_kernel_spec(flat(), 1.0, 0.25, 0.0625);
    auto rep = nonstationary_scan(k, default_nonstationary_scan(NonstationaryRegime::angular_sep));
    EXPECT_LE(rep.h_fit.exponent, -3);
    EXPECT_LE(rep.spatial_fit.exponent, -3);
    // stationary configuration: |I| grows like h^{-n/2} instead of decaying
    auto ctl = nonstationary_scan(k, default_nonstationary_scan(NonstationaryRegime::stationary));
    EXPECT_FALSE(ctl.pass);
    EXPECT_GT(ctl.h_fit.exponent, 0.5);
    EXPECT_LT(ctl.h_fit.exponent, 2.1);
    EXPECT_GT(ctl.spatial_fit.exponent, -1);
}

TEST(AngularSeparation, DecayAndDegradation)
{
    auto k = make_kernel_spec(flat(), 0.25);
    const std::vector<double> s{0.1, 2, 4, 8, 16, 32, 64, 128};
    auto rep = angular_separation_scan(k, 0.5, s, 20);
    EXPECT_EQ(rep.skipped, 1u);
    EXPECT_LE(rep.fit.exponent, -3);
    auto weak = angular_separation_scan(k, 0.02, s, 20);
    EXPECT_GT(weak.fit.exponent, -1.5);
    EXPECT_GT(weak.fit.exponent, rep.fit.exponent + 2);
}

TEST(Dispersive, FlatAndWarpedExponents)
{
    double large[2];
    int i = 0;
    for (const EikonalTable* t : {&flat(), &warped()}) {
        auto k = make_kernel_spec(*t, 1.0, 0.3, 0.3);
        auto rep = dispersive_scan(k, {});
        EXPECT_TRUE(rep.all_converged);
        EXPECT_NEAR(rep.large_hs_exponent, -1.0, 0.1);
        EXPECT_NEAR(rep.small_s_exponent, -2.0, 0.05);
        EXPECT_LE(rep.small_s_modulus_C, rep.modulus_bound * (1 + 1e-8));
        EXPECT_LT(rep.C_fit, 1.0);
        for (auto& x : rep.samples) EXPECT_LE(x.abs_value, rep.C_fit * x.bound_value * (1 + 1e-12));
        large[i++] = rep.large_hs_exponent;
    }
    EXPECT_NEAR(large[0], large[1], 0.15);
}

TEST(Parametrix, WeightedKernelBounded)
{
    for (const EikonalTable* t : {&flat(), &warped()}) {
        auto k = make_kernel_spec(*t, 1.0);
        k.amplitude = parametrix_amplitude(k.support);
        double prev = 0;
        for (int N : {0, 1, 2}) {
            ParametrixScan sc;
            sc.N = N;
            auto rep = parametrix_weight_scan(k, sc);
            EXPECT_TRUE(rep.lower_bound_ok) << rep.min_lower_ratio;
            EXPECT_LE(rep.s_order, 0.1) << N;
            EXPECT_TRUE(rep.pass);
            if (N == 0) {
                prev = rep.max_weighted;
                // N = 0 is the plain kernel sup, below the modulus bound at h = 1
                EXPECT_LE(rep.max_weighted, 1.5 / std::pow(2 * std::numbers::pi, 2));
            }
        }
        EXPECT_GT(prev, 0);
    }
}

TEST(Parametrix, LowerBoundOnTable)
{
    KernelSupport sp;
    const double worst = parametrix_lower_ratio(warped(), sp, {0, 1, 10, 100}, {20, 100, 500});
    // psi ~ r' and varrho >= 1/2
    EXPECT_GT(worst, 0.9);
    EXPECT_LE(worst, 1.01);
}

TEST(Shadow, DiagonalReproducesSymbol)
{
    Symbol f = [](double r, double, double rho, double eta) { return bump((rho - 1.25) / 0.5) * bump(eta / (r * 0.05)); };
    for (const EikonalTable* t : {&flat(), &warped()})
        for (double r : {30.0, 300.0}) {
            auto sh = diagonal_shadow(*t, f, r, 0.0, {0.75, 1.75, -0.05 * r, 0.05 * r});
            EXPECT_LE(sh.rel_error, 0.01) << r;
        }
}
