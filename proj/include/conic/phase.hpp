#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conic/fit.hpp"
#include "conic/flow.hpp"
#include "conic/quadrature.hpp"

namespace conic {

// Theta(R, V, eps_sep) with the energy window I and the sign of varrho.
struct ThetaDomain {
    double R = 20;
    double V_lo = -0.1, V_hi = 0.1;
    double eps_sep = 0.25;
    double I_lo = 0.25, I_hi = 4;
    int sign = 1;
};

inline void validate(const ThetaDomain& d, const ChartMetric2D& m)
{
    if (!(d.R > m.domain_inner())) throw std::invalid_argument("ThetaDomain: R must exceed R_M");
    if (!(d.V_hi > d.V_lo)) throw std::invalid_argument("ThetaDomain: empty angular interval");
    if (!(d.eps_sep > 0)) throw std::invalid_argument("ThetaDomain: eps_sep must be positive");
    if (!(d.I_lo > 0 && d.I_hi > d.I_lo)) throw std::invalid_argument("ThetaDomain: I must be a subinterval of (0, inf)");
    if (d.sign != 1 && d.sign != -1) throw std::invalid_argument("ThetaDomain: sign must be +1 or -1");
}

// Lower-index asymptotic angular metric (the chart stores the inverse coefficient).
inline double gbar_lower(const ChartMetric2D& m, double theta) { return 1.0 / m.gbar(theta); }

struct InvertOptions {
    ScatterOptions scatter{1e-12, 10.0, 8, 3};
    double tol = 1e-11;
    int max_iter = 40;
    double fd_step = 1e-6;
};

struct LagrangianPoint {
    double rho = 0, eta = 0; // (rho_, eta_) below (r, theta, varrho, vartheta)
    double r_bar = 0, theta_bar = 0, rho_bar = 0, eta_bar = 0;
    double residual = 0;
    int iterations = 0;
};

class InversionError : public std::runtime_error {
public:
    InversionError(const std::string& what, double res) : std::runtime_error(what), residual(res) {}
    double residual;
};

// Newton (Broyden-updated, finite-difference start) on (rho, eta) -> (varrhobar, varthetabar).
// By homogeneity the solve is done at |varrho| = 1 and rescaled. The seed, if given, is
// (rho, eta) at the requested varrho.
inline LagrangianPoint invert_lagrangian(const ChartMetric2D& m, double r, double theta, double varrho, double vartheta,
                                         const InvertOptions& opt = {},
                                         std::optional<std::array<double, 2>> seed = std::nullopt)
{
    if (!(varrho != 0)) throw std::invalid_argument("invert_lagrangian: varrho must be nonzero");
    if (!(r > m.domain_inner())) throw std::domain_error("invert_lagrangian: r inside R_M");
    const int sg = varrho > 0 ? 1 : -1;
    const double a = std::abs(varrho);
    // unknowns: x0 = rho / a, x1 = eta / (a r)
    std::array<double, 2> x;
    if (seed)
        x = {(*seed)[0] / a, (*seed)[1] / (a * r)};
    else
        x = {double(sg), sg * gbar_lower(m, theta) * (vartheta - theta)};

    ScatteringData last;
    auto F = [&](const std::array<double, 2>& z, ScatteringData* keep) {
        auto d = scattering_map(m, {r, theta, z[0], z[1] * r}, sg, opt.scatter);
        if (keep) *keep = d;
        return std::array<double, 2>{d.rho_bar - sg, d.theta_bar - vartheta};
    };
    auto norm = [](const std::array<double, 2>& v) { return std::max(std::abs(v[0]), std::abs(v[1])); };

    auto f = F(x, &last);
    double res = norm(f);
    double J[2][2];
    auto fd_jacobian = [&]() {
        for (int c = 0; c < 2; ++c) {
            auto y = x;
            y[c] += opt.fd_step;
            auto fy = F(y, nullptr);
            for (int k = 0; k < 2; ++k) J[k][c] = (fy[k] - f[k]) / opt.fd_step;
        }
    };
    int it = 0;
    if (res > opt.tol) fd_jacobian();
    bool fresh = true;
    while (res > opt.tol) {
        if (++it > opt.max_iter) {
            std::ostringstream msg;
            msg << "invert_lagrangian: no convergence at (r, theta, varrho, vartheta) = (" << r << ", " << theta << ", "
                << varrho << ", " << vartheta << "), residual " << res;
            throw InversionError(msg.str(), res);
        }
        const double det = J[0][0] * J[1][1] - J[0][1] * J[1][0];
        if (!(std::abs(det) > 0)) throw InversionError("invert_lagrangian: singular Jacobian", res);
        std::array<double, 2> dx{-(J[1][1] * f[0] - J[0][1] * f[1]) / det, -(-J[1][0] * f[0] + J[0][0] * f[1]) / det};
        double lam = 1;
        std::array<double, 2> xn, fn;
        ScatteringData dn;
        double rn = 0;
        for (int ls = 0; ls < 8; ++ls, lam *= 0.5) {
            xn = {x[0] + lam * dx[0], x[1] + lam * dx[1]};
            try {
                fn = F(xn, &dn);
            } catch (const FlowError&) {
                continue;
            }
            rn = norm(fn);
            if (rn < res) break;
        }
        if (!(rn < res)) {
            // stagnation at the noise level of the scattering map
            if (res < 1e3 * opt.tol) break;
            if (!fresh) {
                fd_jacobian();
                fresh = true;
                continue;
            }
            std::ostringstream msg;
            msg << "invert_lagrangian: Newton stalled at residual " << res;
            throw InversionError(msg.str(), res);
        }
        // Broyden update with the accepted step
        std::array<double, 2> s{xn[0] - x[0], xn[1] - x[1]};
        const double ss = s[0] * s[0] + s[1] * s[1];
        for (int k = 0; k < 2; ++k) {
            const double y = fn[k] - f[k] - (J[k][0] * s[0] + J[k][1] * s[1]);
            J[k][0] += y * s[0] / ss;
            J[k][1] += y * s[1] / ss;
        }
        fresh = false;
        x = xn;
        f = fn;
        res = rn;
        last = dn;
    }
    LagrangianPoint p;
    p.rho = a * x[0];
    p.eta = a * x[1] * r;
    p.r_bar = last.r_bar;
    p.theta_bar = last.theta_bar;
    p.rho_bar = a * last.rho_bar;
    p.eta_bar = a * last.eta_bar;
    p.residual = res;
    p.iterations = it;
    return p;
}

struct EikonalGridSpec {
    std::size_t nr = 16, ntheta = 9, nvartheta = 9;
    double r_max = 2000;
};

struct EikonalValue {
    double psi, dr, dtheta, dvartheta;
};

// psi(r, theta, vartheta) on a Chebyshev tensor grid (Lobatto nodes in log r, theta, vartheta),
// for varrho = sign. Field layout is [i][k][l] = (r, theta, vartheta).
struct EikonalTable {
    ChartMetric2D metric;
    ThetaDomain domain;
    double eps_scale = 1;
    std::vector<double> r, theta, vartheta;
    std::vector<double> psi, d_r, d_theta, d_vartheta, r_bar;
    double R_anchor = 0, theta0 = 0;
    // construction diagnostics
    double max_hj_residual = 0;
    double max_newton_residual = 0;
    double max_circulation = 0;
    double max_generating_residual = 0;
    double min_dr = 0, max_dr = 0;

    std::size_t index(std::size_t i, std::size_t k, std::size_t l) const
    {
        return (i * theta.size() + k) * vartheta.size() + l;
    }
    std::size_t size() const { return r.size() * theta.size() * vartheta.size(); }

    bool contains(double rr, double th, double vt, double slack = 1e-12) const
    {
        return rr >= r.front() * (1 - slack) && rr <= r.back() * (1 + slack) && th >= theta.front() - slack &&
               th <= theta.back() + slack && vt >= vartheta.front() - slack && vt <= vartheta.back() + slack;
    }

    EikonalValue eval(double rr, double th, double vt) const
    {
        if (!contains(rr, th, vt)) {
            std::ostringstream msg;
            msg << "EikonalTable: point (" << rr << ", " << th << ", " << vt << ") outside the table";
            throw std::out_of_range(msg.str());
        }
        std::vector<double> lu, lt, lv;
        std::vector<double> u(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) u[i] = std::log(r[i]);
        ChebInterp(u).weights(std::log(rr), lu);
        ChebInterp(theta).weights(th, lt);
        ChebInterp(vartheta).weights(vt, lv);
        EikonalValue v{0, 0, 0, 0};
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (lu[i] == 0) continue;
            for (std::size_t k = 0; k < theta.size(); ++k) {
                const double wik = lu[i] * lt[k];
                if (wik == 0) continue;
                for (std::size_t l = 0; l < vartheta.size(); ++l) {
                    const double w = wik * lv[l];
                    const std::size_t q = index(i, k, l);
                    v.psi += w * psi[q];
                    v.dr += w * d_r[q];
                    v.dtheta += w * d_theta[q];
                    v.dvartheta += w * d_vartheta[q];
                }
            }
        }
        return v;
    }
};

// Pointwise inversion over the tensor grid, then line integration of
//   d psi = (rho_ dr + eta_ dtheta - etabar dvartheta) / varrho
// from (R_anchor, theta0, theta0) with psi = R_anchor there.
inline EikonalTable build_eikonal(const ChartMetric2D& metric, const ThetaDomain& dom, const EikonalGridSpec& grid,
                                  double eps_scale = 1.0, const InvertOptions& opt = {}, double circulation_tol = 1e-6)
{
    const ChartMetric2D m = eps_scale == 1.0 ? metric : metric.scaled(eps_scale);
    validate(dom, m);
    if (dom.V_hi - dom.V_lo >= dom.eps_sep)
        throw std::invalid_argument("build_eikonal: the (theta, vartheta) box needs |V| < eps_sep");
    if (!(grid.r_max > dom.R)) throw std::invalid_argument("build_eikonal: r_max must exceed R");
    if (grid.nr < 3 || grid.ntheta < 3 || grid.nvartheta < 3)
        throw std::invalid_argument("build_eikonal: at least three nodes per axis");

    EikonalTable t;
    t.metric = m;
    t.domain = dom;
    t.eps_scale = eps_scale;
    auto u = cheb_lobatto(grid.nr, std::log(dom.R), std::log(grid.r_max));
    t.r.resize(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) t.r[i] = std::exp(u[i]);
    t.r.front() = dom.R;
    t.r.back() = grid.r_max;
    t.theta = cheb_lobatto(grid.ntheta, dom.V_lo, dom.V_hi);
    t.vartheta = cheb_lobatto(grid.nvartheta, dom.V_lo, dom.V_hi);
    t.R_anchor = t.r.front();
    t.theta0 = t.theta.front();

    const std::size_t NR = t.r.size(), NT = t.theta.size(), NV = t.vartheta.size();
    const std::size_t N = t.size();
    t.psi.assign(N, 0);
    t.d_r.assign(N, 0);
    t.d_theta.assign(N, 0);
    t.d_vartheta.assign(N, 0);
    t.r_bar.assign(N, 0);
    std::vector<double> newton(N, 0), hj(N, 0);
    const double varrho = dom.sign;

    // independent (theta, vartheta) columns, continuation in r inside a column
    parallel_for(NT * NV, [&](std::size_t kl) {
        const std::size_t k = kl / NV, l = kl % NV;
        std::optional<std::array<double, 2>> seed;
        for (std::size_t i = 0; i < NR; ++i) {
            auto lp = invert_lagrangian(m, t.r[i], t.theta[k], varrho, t.vartheta[l], opt, seed);
            seed = std::array<double, 2>{lp.rho, lp.eta * (i + 1 < NR ? t.r[i + 1] / t.r[i] : 1.0)};
            const std::size_t q = t.index(i, k, l);
            t.d_r[q] = lp.rho / varrho;
            t.d_theta[q] = lp.eta / varrho;
            t.d_vartheta[q] = -lp.eta_bar / varrho;
            t.r_bar[q] = lp.r_bar;
            newton[q] = lp.residual;
            hj[q] = std::abs(principal_symbol(m, {t.r[i], t.theta[k], lp.rho, lp.eta}) - varrho * varrho);
        }
    });

    // cumulative integration matrices (r axis in u = log r, integrand r d_r)
    const auto Qu = cheb_cumulative_matrix(u);
    const auto Qt = cheb_cumulative_matrix(t.theta);
    const auto Qv = cheb_cumulative_matrix(t.vartheta);
    auto cum = [](const std::vector<double>& Q, std::size_t n, const std::vector<double>& f) {
        std::vector<double> out(n, 0.0);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) out[a] += Q[a * n + b] * f[b];
        return out;
    };

    // psi(R, theta0, vartheta_l)
    std::vector<double> base_v(NV);
    {
        std::vector<double> f(NV);
        for (std::size_t l = 0; l < NV; ++l) f[l] = t.d_vartheta[t.index(0, 0, l)];
        auto c = cum(Qv, NV, f);
        // anchor on the diagonal node theta0 = vartheta_0
        for (std::size_t l = 0; l < NV; ++l) base_v[l] = t.R_anchor + c[l];
    }
    for (std::size_t l = 0; l < NV; ++l) {
        std::vector<double> f(NT);
        for (std::size_t k = 0; k < NT; ++k) f[k] = t.d_theta[t.index(0, k, l)];
        auto c = cum(Qt, NT, f);
        for (std::size_t k = 0; k < NT; ++k) {
            std::vector<double> g(NR);
            for (std::size_t i = 0; i < NR; ++i) g[i] = t.r[i] * t.d_r[t.index(i, k, l)];
            auto cr = cum(Qu, NR, g);
            for (std::size_t i = 0; i < NR; ++i) t.psi[t.index(i, k, l)] = base_v[l] + c[k] + cr[i];
        }
    }

    // plaquette circulation in the three coordinate planes
    double circ = 0;
    {
        // edge integrals along each axis between consecutive nodes
        std::vector<double> er(N, 0), et(N, 0), ev(N, 0);
        for (std::size_t k = 0; k < NT; ++k)
            for (std::size_t l = 0; l < NV; ++l) {
                std::vector<double> g(NR);
                for (std::size_t i = 0; i < NR; ++i) g[i] = t.r[i] * t.d_r[t.index(i, k, l)];
                auto c = cum(Qu, NR, g);
                for (std::size_t i = 0; i + 1 < NR; ++i) er[t.index(i, k, l)] = c[i + 1] - c[i];
            }
        for (std::size_t i = 0; i < NR; ++i)
            for (std::size_t l = 0; l < NV; ++l) {
                std::vector<double> g(NT);
                for (std::size_t k = 0; k < NT; ++k) g[k] = t.d_theta[t.index(i, k, l)];
                auto c = cum(Qt, NT, g);
                for (std::size_t k = 0; k + 1 < NT; ++k) et[t.index(i, k, l)] = c[k + 1] - c[k];
            }
        for (std::size_t i = 0; i < NR; ++i)
            for (std::size_t k = 0; k < NT; ++k) {
                std::vector<double> g(NV);
                for (std::size_t l = 0; l < NV; ++l) g[l] = t.d_vartheta[t.index(i, k, l)];
                auto c = cum(Qv, NV, g);
                for (std::size_t l = 0; l + 1 < NV; ++l) ev[t.index(i, k, l)] = c[l + 1] - c[l];
            }
        for (std::size_t i = 0; i < NR; ++i)
            for (std::size_t k = 0; k < NT; ++k)
                for (std::size_t l = 0; l < NV; ++l) {
                    if (i + 1 < NR && k + 1 < NT)
                        circ = std::max(circ, std::abs(er[t.index(i, k, l)] + et[t.index(i + 1, k, l)] -
                                                       er[t.index(i, k + 1, l)] - et[t.index(i, k, l)]));
                    if (i + 1 < NR && l + 1 < NV)
                        circ = std::max(circ, std::abs(er[t.index(i, k, l)] + ev[t.index(i + 1, k, l)] -
                                                       er[t.index(i, k, l + 1)] - ev[t.index(i, k, l)]));
                    if (k + 1 < NT && l + 1 < NV)
                        circ = std::max(circ, std::abs(et[t.index(i, k, l)] + ev[t.index(i, k + 1, l)] -
                                                       et[t.index(i, k, l + 1)] - ev[t.index(i, k, l)]));
                }
    }
    t.max_circulation = circ;
    t.min_dr = 1e300;
    t.max_dr = -1e300;
    for (std::size_t q = 0; q < N; ++q) {
        t.max_newton_residual = std::max(t.max_newton_residual, newton[q]);
        t.max_hj_residual = std::max(t.max_hj_residual, hj[q]);
        t.max_generating_residual = std::max(t.max_generating_residual, std::abs(t.psi[q] - t.r_bar[q]));
        t.min_dr = std::min(t.min_dr, t.d_r[q]);
        t.max_dr = std::max(t.max_dr, t.d_r[q]);
    }
    if (circ > circulation_tol) {
        std::ostringstream msg;
        msg << "build_eikonal: plaquette circulation " << circ << " exceeds " << circulation_tol;
        throw std::runtime_error(msg.str());
    }
    return t;
}

// ---- persistence: CSV of grid nodes plus a JSON sidecar ----

inline nlohmann::json metric_to_json(const ChartMetric2D& m)
{
    return {{"family", family_name(m.profile.family)}, {"amplitude", m.profile.amplitude}, {"nu", m.profile.nu},
            {"r_flat", m.profile.r_flat}, {"angular", m.angular}, {"r_inner", m.r_inner}, {"eps", m.eps}};
}

inline ChartMetric2D metric_from_json(const nlohmann::json& j)
{
    ChartMetric2D m = make_chart(parse_family(j.at("family").get<std::string>()), j.at("amplitude").get<double>(),
                                 j.at("nu").get<double>(), j.at("r_flat").get<double>(), j.at("r_inner").get<double>(),
                                 j.at("angular").get<double>());
    m.eps = j.at("eps").get<double>();
    return m;
}

inline void write_table(const EikonalTable& t, const std::string& csv_path)
{
    std::ofstream out(csv_path);
    if (!out) throw std::runtime_error("write_table: cannot open " + csv_path);
    out << "# schema=1\n";
    out << "r,theta,vartheta,psi,dpsi_r,dpsi_theta,dpsi_vartheta\n";
    char buf[512];
    for (std::size_t i = 0; i < t.r.size(); ++i)
        for (std::size_t k = 0; k < t.theta.size(); ++k)
            for (std::size_t l = 0; l < t.vartheta.size(); ++l) {
                const std::size_t q = t.index(i, k, l);
                std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", t.r[i], t.theta[k],
                              t.vartheta[l], t.psi[q], t.d_r[q], t.d_theta[q], t.d_vartheta[q]);
                out << buf;
            }
    nlohmann::json j;
    j["schema"] = 1;
    j["metric"] = metric_to_json(t.metric);
    j["domain"] = {{"R", t.domain.R},         {"V", {t.domain.V_lo, t.domain.V_hi}},
                   {"eps_sep", t.domain.eps_sep}, {"I", {t.domain.I_lo, t.domain.I_hi}},
                   {"sign", t.domain.sign}};
    j["eps_scale"] = t.eps_scale;
    j["grid"] = {{"nr", t.r.size()}, {"ntheta", t.theta.size()}, {"nvartheta", t.vartheta.size()}};
    j["anchor"] = {{"R_anchor", t.R_anchor}, {"theta0", t.theta0}};
    j["diagnostics"] = {{"max_hj_residual", t.max_hj_residual},
                        {"max_newton_residual", t.max_newton_residual},
                        {"max_circulation", t.max_circulation},
                        {"max_generating_residual", t.max_generating_residual}};
    std::ofstream side(csv_path + ".json");
    side << j.dump(2) << "\n";
}

inline EikonalTable read_table(const std::string& csv_path)
{
    std::ifstream side(csv_path + ".json");
    if (!side) throw std::runtime_error("read_table: missing sidecar " + csv_path + ".json");
    nlohmann::json j = nlohmann::json::parse(side);
    EikonalTable t;
    t.metric = metric_from_json(j.at("metric"));
    auto& d = j.at("domain");
    t.domain.R = d.at("R");
    t.domain.V_lo = d.at("V")[0];
    t.domain.V_hi = d.at("V")[1];
    t.domain.eps_sep = d.at("eps_sep");
    t.domain.I_lo = d.at("I")[0];
    t.domain.I_hi = d.at("I")[1];
    t.domain.sign = d.at("sign");
    t.eps_scale = j.at("eps_scale");
    t.R_anchor = j.at("anchor").at("R_anchor");
    t.theta0 = j.at("anchor").at("theta0");
    auto& dg = j.at("diagnostics");
    t.max_hj_residual = dg.at("max_hj_residual");
    t.max_newton_residual = dg.at("max_newton_residual");
    t.max_circulation = dg.at("max_circulation");
    t.max_generating_residual = dg.at("max_generating_residual");
    const std::size_t NR = j.at("grid").at("nr"), NT = j.at("grid").at("ntheta"), NV = j.at("grid").at("nvartheta");
    t.r.resize(NR);
    t.theta.resize(NT);
    t.vartheta.resize(NV);
    const std::size_t N = NR * NT * NV;
    t.psi.resize(N);
    t.d_r.resize(N);
    t.d_theta.resize(N);
    t.d_vartheta.resize(N);
    t.r_bar.assign(N, std::numeric_limits<double>::quiet_NaN());
    std::ifstream in(csv_path);
    if (!in) throw std::runtime_error("read_table: cannot open " + csv_path);
    std::string line;
    std::size_t row = 0, lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#' || line[0] == 'r') continue;
        double v[7];
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%lf", &v[0], &v[1], &v[2], &v[3], &v[4], &v[5], &v[6]) != 7)
            throw std::runtime_error("read_table: malformed row at line " + std::to_string(lineno));
        if (row >= N) throw std::runtime_error("read_table: more rows than the sidecar grid");
        const std::size_t i = row / (NT * NV), k = (row / NV) % NT, l = row % NV;
        t.r[i] = v[0];
        t.theta[k] = v[1];
        t.vartheta[l] = v[2];
        t.psi[row] = v[3];
        t.d_r[row] = v[4];
        t.d_theta[row] = v[5];
        t.d_vartheta[row] = v[6];
        ++row;
    }
    if (row != N) throw std::runtime_error("read_table: row count does not match the sidecar grid");
    return t;
}

// ---- expansions of psi and of (rho_, eta_) in powers of vartheta - theta ----

struct ExpansionFit {
    std::string name;
    DecayFit fit;
    double expected = 0; // order of the symbol class
    double max_abs = 0;  // largest coefficient magnitude seen
    bool pass = false;
};

struct ExpansionReport {
    std::vector<ExpansionFit> fits;
    bool pass = false;
};

struct ExpansionSweep {
    double r_lo = 20, r_hi = 2000;
    std::size_t r_samples = 10;
    double delta_max = 0.08;
    double tolerance = 0.15;
    double zero_floor = 1e-9; // coefficients below floor * scale count as identically zero
};

namespace detail {

// odd and even parts of q(delta) fitted as c1 delta + c3 delta^3 + c5 delta^5 and
// c2 delta^2 + c4 delta^4 + c6 delta^6; returns the leading coefficient
inline double leading_coefficient(const std::vector<double>& d, const std::vector<double>& y, int p)
{
    double A[3][4] = {};
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double b[3] = {std::pow(d[i], p), std::pow(d[i], p + 2), std::pow(d[i], p + 4)};
        for (int j = 0; j < 3; ++j) {
            for (int k = 0; k < 3; ++k) A[j][k] += b[j] * b[k];
            A[j][3] += b[j] * y[i];
        }
    }
    for (int c = 0; c < 3; ++c)
        for (int r = c + 1; r < 3; ++r) {
            const double f = A[r][c] / A[c][c];
            for (int k = c; k < 4; ++k) A[r][k] -= f * A[c][k];
        }
    double x[3];
    for (int r = 2; r >= 0; --r) {
        double v = A[r][3];
        for (int k = r + 1; k < 3; ++k) v -= A[r][k] * x[k];
        x[r] = v / A[r][r];
    }
    return x[0];
}

inline ExpansionFit make_fit(const std::string& name, const std::vector<double>& rs, const std::vector<double>& coef,
                             double expected, double scale_of_r_power, const ExpansionSweep& sw)
{
    ExpansionFit e;
    e.name = name;
    e.expected = expected;
    std::vector<std::pair<double, double>> s;
    bool all_zero = true;
    for (std::size_t i = 0; i < rs.size(); ++i) {
        e.max_abs = std::max(e.max_abs, std::abs(coef[i]));
        if (std::abs(coef[i]) > sw.zero_floor * std::pow(rs[i], scale_of_r_power)) all_zero = false;
        s.emplace_back(rs[i], coef[i]);
    }
    if (all_zero) {
        e.fit.identically_zero = true;
        e.fit.samples = rs.size();
        // zero belongs to every symbol class
        e.pass = true;
        return e;
    }
    e.fit = power_fit(s);
    e.pass = std::abs(e.fit.exponent - expected) <= sw.tolerance;
    return e;
}

} // namespace detail

// Coefficients of the delta and delta^2 terms at theta = centre of V, fitted in r.
// psi structure from the table; (rho_, eta_) from pointwise inversion.
inline ExpansionReport check_eikonal_expansions(const EikonalTable& t, const ExpansionSweep& sw = {},
                                                const InvertOptions& opt = {})
{
    const double nu = t.metric.nu();
    const double th = 0.5 * (t.theta.front() + t.theta.back());
    const double half = 0.5 * (t.vartheta.back() - t.vartheta.front());
    const double dmax = std::min(sw.delta_max, half);
    const auto mags = linspace(dmax / 6, dmax, 6);
    const double lo = std::max(sw.r_lo, t.r.front()), hi = std::min(sw.r_hi, t.r.back());
    auto rs = geomspace(lo, hi, sw.r_samples);
    const double gl = gbar_lower(t.metric, th);
    const double varrho = t.domain.sign;

    enum { PSI, DR, DT, DV, RHO, ETA, NQ };
    std::vector<std::array<double, NQ>> c1(rs.size()), c2(rs.size());
    parallel_for(rs.size(), [&](std::size_t i) {
        const double r = rs[i];
        std::array<std::vector<double>, NQ> odd, even;
        auto sample = [&](double delta) {
            auto v = t.eval(r, th, th + delta);
            auto lp = invert_lagrangian(t.metric, r, th, varrho, th + delta, opt);
            return std::array<double, NQ>{v.psi - r,
                                          v.dr - 1,
                                          v.dtheta - r * gl * delta,
                                          v.dvartheta + r * gl * delta,
                                          lp.rho - varrho,
                                          lp.eta - r * varrho * gl * delta};
        };
        const auto zero = sample(0.0);
        for (double d : mags) {
            auto p = sample(d), m = sample(-d);
            for (int q = 0; q < NQ; ++q) {
                odd[q].push_back(0.5 * (p[q] - m[q]));
                even[q].push_back(0.5 * (p[q] + m[q]) - zero[q]);
            }
        }
        for (int q = 0; q < NQ; ++q) {
            c1[i][q] = detail::leading_coefficient(mags, odd[q], 1);
            c2[i][q] = detail::leading_coefficient(mags, even[q], 2);
        }
    });
    auto col = [&](const std::vector<std::array<double, NQ>>& c, int q) {
        std::vector<double> v;
        for (auto& a : c) v.push_back(a[q]);
        return v;
    };
    ExpansionReport rep;
    // names follow the quantity minus its leading term; orders are those of the symbol classes
    rep.fits.push_back(detail::make_fit("psi-r:delta", rs, col(c1, PSI), 1 - nu, 1, sw));
    rep.fits.push_back(detail::make_fit("psi-r:delta^2", rs, col(c2, PSI), 1, 1, sw));
    rep.fits.push_back(detail::make_fit("dr_psi-1:delta", rs, col(c1, DR), -nu, 0, sw));
    rep.fits.push_back(detail::make_fit("dr_psi-1:delta^2", rs, col(c2, DR), 0, 0, sw));
    rep.fits.push_back(detail::make_fit("dtheta_psi-r*gbar*delta:delta", rs, col(c1, DT), 1 - nu, 1, sw));
    rep.fits.push_back(detail::make_fit("dtheta_psi-r*gbar*delta:delta^2", rs, col(c2, DT), 1, 1, sw));
    rep.fits.push_back(detail::make_fit("dvartheta_psi+r*gbar*delta:delta", rs, col(c1, DV), 1 - nu, 1, sw));
    rep.fits.push_back(detail::make_fit("dvartheta_psi+r*gbar*delta:delta^2", rs, col(c2, DV), 1, 1, sw));
    rep.fits.push_back(detail::make_fit("rho_-varrho:delta", rs, col(c1, RHO), -nu, 0, sw));
    rep.fits.push_back(detail::make_fit("rho_-varrho:delta^2", rs, col(c2, RHO), 0, 0, sw));
    rep.fits.push_back(detail::make_fit("eta_-r*varrho*gbar*delta:delta", rs, col(c1, ETA), 1 - nu, 1, sw));
    rep.fits.push_back(detail::make_fit("eta_-r*varrho*gbar*delta:delta^2", rs, col(c2, ETA), 1, 1, sw));
    rep.pass = true;
    for (auto& f : rep.fits) rep.pass = rep.pass && f.pass;
    return rep;
}

// ---- characteristics and transport ----

struct CharacteristicResult {
    PhasePoint start;
    PhasePoint state;
    double invariance_residual = 0;
};

// Flow from (r, theta, d_{r,theta} phi) with phi = varrho psi from the table; the momenta
// along the curve must equal d_{r,theta} phi at the new base point.
inline CharacteristicResult characteristic(const EikonalTable& t, double r, double theta, double varrho,
                                           double vartheta, double s, double tol = 1e-12)
{
    if (s * t.domain.sign < 0) throw std::invalid_argument("characteristic: sign(s) must match the domain sign");
    auto v = t.eval(r, theta, vartheta);
    CharacteristicResult c;
    c.start = {r, theta, varrho * v.dr, varrho * v.dtheta};
    c.state = integrate_flow(t.metric, c.start, s, tol);
    if (!t.contains(c.state.r, c.state.theta, vartheta)) {
        std::ostringstream msg;
        msg << "characteristic: trajectory leaves the table at (" << c.state.r << ", " << c.state.theta
            << "); enlarge the domain";
        throw std::out_of_range(msg.str());
    }
    auto w = t.eval(c.state.r, c.state.theta, vartheta);
    c.invariance_residual = std::max(std::abs(c.state.rho - varrho * w.dr) / std::abs(varrho),
                                     std::abs(c.state.eta - varrho * w.dtheta) / (std::abs(varrho) * c.state.r));
    return c;
}

struct TransportOptions {
    int n = 2;                // dimension entering the (n - 1)/r d_r term
    double rel_step_r = 1e-3; // radial stencil step relative to r
    double step_theta = 5e-3; // angular stencil step
    // b is a difference of O(1/r) terms, so the inversion runs tighter than the table default
    InvertOptions inv{ScatterOptions{1e-13, 10.0, 8, 3}, 1e-12, 40, 1e-6};
    // characteristic ladder
    double horizon_factor = 10.0;
    int doublings = 8;
    std::size_t gauss_order = 6;
    double flow_tol = 1e-12;
    double converge_floor = 1e-10; // ladder increments below this count as converged
};

// b = -P phi = Delta phi for the chart Laplacian
//   d_r^2 + g r^{-2} d_theta^2 + (n - 1) r^{-1} d_r + w d_r + w_theta d_theta,
// w = -g_r / (2 g), w_theta = g_theta / (2 r^2); second derivatives by seven-point
// differences of (rho_, eta_).
inline double transport_b(const ChartMetric2D& m, double r, double theta, double varrho, double vartheta,
                          const TransportOptions& o = {}, std::optional<std::array<double, 2>> seed = std::nullopt)
{
    auto c = invert_lagrangian(m, r, theta, varrho, vartheta, o.inv, seed);
    const double hr = o.rel_step_r * r, ht = o.step_theta;
    if (!(r - 3 * hr > m.domain_inner())) throw std::domain_error("transport_b: radial stencil crosses R_M");
    auto rho_at = [&](double rr) {
        return invert_lagrangian(m, rr, theta, varrho, vartheta, o.inv, std::array<double, 2>{c.rho, c.eta * rr / r})
            .rho;
    };
    auto eta_at = [&](double tt) {
        const double guess = c.eta - (tt - theta) * r * varrho * gbar_lower(m, theta);
        return invert_lagrangian(m, r, tt, varrho, vartheta, o.inv, std::array<double, 2>{c.rho, guess}).eta;
    };
    // seven-point central differences, O(h^6)
    auto d1 = [](const std::function<double(double)>& fn, double x, double h) {
        return (45 * (fn(x + h) - fn(x - h)) - 9 * (fn(x + 2 * h) - fn(x - 2 * h)) + (fn(x + 3 * h) - fn(x - 3 * h))) /
               (60 * h);
    };
    const double phi_rr = d1(rho_at, r, hr);
    const double phi_tt = d1(eta_at, theta, ht);
    const ChartValue g = m.eval(r, theta);
    const double w = -0.5 * g.gr / g.g, wt = 0.5 * g.gt / (r * r);
    return phi_rr + g.g * phi_tt / (r * r) + (o.n - 1) / r * c.rho + w * c.rho + wt * c.eta;
}

// Same, with the stencil required inside the table (the table supplies the seed).
inline double transport_b(const EikonalTable& t, double r, double theta, double varrho, double vartheta,
                          const TransportOptions& o = {})
{
    const double hr = o.rel_step_r * r, ht = o.step_theta;
    if (!t.contains(r - 3 * hr, theta - 3 * ht, vartheta, 0) || !t.contains(r + 3 * hr, theta + 3 * ht, vartheta, 0))
        throw std::out_of_range("transport_b: stencil leaves the table grid");
    auto v = t.eval(r, theta, vartheta);
    return transport_b(t.metric, r, theta, varrho, vartheta, o, std::array<double, 2>{varrho * v.dr, varrho * v.dtheta});
}

struct TransportResult {
    double value = 0;
    double integral_b = 0; // extrapolated int_0^{+-inf} b ds
    double extrapolation_error = 0;
    bool converged = false;
    std::vector<double> horizons;     // ladder horizons S_k
    std::vector<double> ladder;       // amplitude truncated at S_k
    std::vector<double> ladder_int_b; // int_0^{S_k} b ds
};

namespace detail {

// M[j][k] = int_{-1}^{x_j} L_k, the cumulative Lagrange integration matrix on the nodes x.
inline std::vector<double> lagrange_cumulative(const std::vector<double>& x)
{
    const std::size_t n = x.size();
    std::vector<double> M(n * n, 0.0);
    const Rule q = gauss_legendre(n + 2);
    for (std::size_t j = 0; j < n; ++j) {
        const double a = -1, b = x[j], c = 0.5 * (a + b), h = 0.5 * (b - a);
        for (std::size_t p = 0; p < q.x.size(); ++p) {
            const double t = c + h * q.x[p];
            for (std::size_t k = 0; k < n; ++k) {
                double L = 1;
                for (std::size_t m = 0; m < n; ++m)
                    if (m != k) L *= (t - x[m]) / (x[k] - x[m]);
                M[j * n + k] += h * q.w[p] * L;
            }
        }
    }
    return M;
}

// Aitken-type limit of a ladder whose increments shrink geometrically.
inline std::pair<double, double> ladder_limit(const std::vector<double>& v, double abs_floor, bool& converged)
{
    const std::size_t K = v.size();
    const double i1 = v[K - 1] - v[K - 2], i0 = v[K - 2] - v[K - 3], im = v[K - 3] - v[K - 4];
    if (std::abs(i1) <= abs_floor && std::abs(i0) <= abs_floor) {
        converged = true;
        return {v[K - 1], std::abs(i1)};
    }
    const double q = i1 / i0, qp = i0 / im;
    converged = std::isfinite(q) && q > 0 && q < 0.9 && std::isfinite(qp) && qp > 0 && qp < 0.9;
    if (!converged) return {v[K - 1], std::abs(i1)};
    const double corr = i1 * q / (1 - q);
    return {v[K - 1] + corr, std::abs(corr)};
}

} // namespace detail

// C exp(int_0^{+-inf} b) - int_0^{+-inf} f exp(int_0^s b) ds along the characteristic from
// (r, theta, d phi). The time integrals use Gauss panels on a doubling ladder and an
// Aitken extrapolation of the ladder values.
inline TransportResult solve_transport(const ChartMetric2D& m, double r, double theta, double varrho, double vartheta,
                                       double C, const std::function<double(double, double)>& f,
                                       const TransportOptions& o = {})
{
    const int sg = varrho > 0 ? 1 : -1;
    auto start = invert_lagrangian(m, r, theta, varrho, vartheta, o.inv);
    const double S0 = o.horizon_factor * r / std::abs(varrho);
    // panel edges: [0, S0/64], then doubling to S0 2^doublings
    std::vector<double> edges{0.0};
    for (double e = S0 / 64; e <= S0 * std::ldexp(1.0, o.doublings) * (1 + 1e-12); e *= 2) edges.push_back(e);
    const Rule ref = gauss_legendre(o.gauss_order);
    const auto M = detail::lagrange_cumulative(ref.x);
    std::vector<double> times;
    for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
        const double a = edges[p], b = edges[p + 1];
        for (double x : ref.x) times.push_back(sg * (0.5 * (a + b) + 0.5 * (b - a) * x));
    }
    const PhasePoint x0{r, theta, start.rho, start.eta};
    auto traj = flow_samples(m, x0, times, o.flow_tol);
    std::vector<double> bv(times.size()), fv(times.size(), 0.0);
    parallel_for(times.size(), [&](std::size_t i) {
        const auto& y = traj[i];
        bv[i] = transport_b(m, y.r, y.theta, varrho, vartheta, o, std::array<double, 2>{y.rho, y.eta});
        if (f) fv[i] = f(y.r, y.theta);
    });
    // cumulative integrals panel by panel (ds = sg * dt along the ladder variable)
    const std::size_t G = o.gauss_order;
    double B = 0, F = 0;
    TransportResult res;
    for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
        const double h = 0.5 * (edges[p + 1] - edges[p]);
        const std::size_t off = p * G;
        double Fp = 0;
        for (std::size_t j = 0; j < G; ++j) {
            double Bj = 0;
            for (std::size_t k = 0; k < G; ++k) Bj += M[j * G + k] * bv[off + k];
            Bj = B + sg * h * Bj;
            Fp += ref.w[j] * fv[off + j] * std::exp(Bj);
        }
        double Bp = 0;
        for (std::size_t j = 0; j < G; ++j) Bp += ref.w[j] * bv[off + j];
        B += sg * h * Bp;
        F += sg * h * Fp;
        if (edges[p + 1] >= S0 * (1 - 1e-12)) {
            res.horizons.push_back(sg * edges[p + 1]);
            res.ladder_int_b.push_back(B);
            res.ladder.push_back(C * std::exp(B) - F);
        }
    }
    bool cb = false, cv = false;
    auto lb = detail::ladder_limit(res.ladder_int_b, o.converge_floor, cb);
    auto lv = detail::ladder_limit(res.ladder, o.converge_floor * std::max(1.0, std::abs(C)), cv);
    res.integral_b = lb.first;
    res.value = lv.first;
    res.extrapolation_error = lv.second;
    res.converged = cb && cv;
    return res;
}

struct BDecaySweep {
    std::vector<double> r0{20, 40, 80, 160, 320};
    std::vector<double> tau{2, 4, 8, 16, 32, 64}; // s / r along the characteristic
    double theta = 0.3;
    double delta = 0.05; // vartheta - theta at the start
    double varrho = 1;
};

struct BDecayReport {
    double tau_exponent = 0;  // large-s decay of b along characteristics, averaged over r0
    double r_exponent = 0;    // decay in r0 at fixed s / r, averaged over tau
    double C_first = 0;       // fitted coefficient of <s/r>^{-1-nu} r^{-1-nu}
    double C_second = 0;      // fitted coefficient of <s/r>^{-2} r^{-1}
    double max_model_ratio = 0; // max |b| / (C_first term + C_second term)
    std::vector<std::array<double, 3>> samples; // (r0, tau, b)
};

// |b(r^s, theta^s)| along characteristics, fitted in s / r and in r, plus a
// non-negative two-term fit against the bound <s/r>^{-1-nu} r^{-1-nu} + <s/r>^{-2} r^{-1}.
inline BDecayReport fit_b_decay(const ChartMetric2D& m, const BDecaySweep& sw, const TransportOptions& o = {})
{
    const double nu = m.nu();
    const std::size_t NR = sw.r0.size(), NT = sw.tau.size();
    std::vector<double> b(NR * NT);
    parallel_for(NR, [&](std::size_t i) {
        const double r0 = sw.r0[i], vt = sw.theta + sw.delta;
        auto c = invert_lagrangian(m, r0, sw.theta, sw.varrho, vt, o.inv);
        std::vector<double> times;
        for (double t : sw.tau) times.push_back(t * r0 * (sw.varrho > 0 ? 1 : -1));
        auto tr = flow_samples(m, {r0, sw.theta, c.rho, c.eta}, times, o.flow_tol);
        for (std::size_t k = 0; k < NT; ++k)
            b[i * NT + k] = transport_b(m, tr[k].r, tr[k].theta, sw.varrho, vt, o,
                                        std::array<double, 2>{tr[k].rho, tr[k].eta});
    });
    BDecayReport rep;
    for (std::size_t i = 0; i < NR; ++i)
        for (std::size_t k = 0; k < NT; ++k) rep.samples.push_back({sw.r0[i], sw.tau[k], b[i * NT + k]});
    double te = 0, re = 0;
    for (std::size_t i = 0; i < NR; ++i) {
        std::vector<std::pair<double, double>> s;
        for (std::size_t k = 0; k < NT; ++k) s.emplace_back(std::sqrt(1 + sw.tau[k] * sw.tau[k]), b[i * NT + k]);
        te += power_fit(s).exponent / NR;
    }
    for (std::size_t k = 0; k < NT; ++k) {
        std::vector<std::pair<double, double>> s;
        for (std::size_t i = 0; i < NR; ++i) s.emplace_back(sw.r0[i], b[i * NT + k]);
        re += power_fit(s).exponent / NT;
    }
    rep.tau_exponent = te;
    rep.r_exponent = re;
    // relative least squares |b| ~ C1 u + C2 v with C1, C2 >= 0
    double a11 = 0, a12 = 0, a22 = 0, y1 = 0, y2 = 0;
    std::vector<double> U, W;
    for (std::size_t i = 0; i < NR; ++i)
        for (std::size_t k = 0; k < NT; ++k) {
            const double br = std::sqrt(1 + sw.tau[k] * sw.tau[k]);
            const double bb = std::abs(b[i * NT + k]);
            const double u = std::pow(br, -1 - nu) * std::pow(sw.r0[i], -1 - nu) / bb;
            const double v = std::pow(br, -2.0) / sw.r0[i] / bb;
            U.push_back(u);
            W.push_back(v);
            a11 += u * u;
            a12 += u * v;
            a22 += v * v;
            y1 += u;
            y2 += v;
        }
    const double det = a11 * a22 - a12 * a12;
    double C1 = (a22 * y1 - a12 * y2) / det, C2 = (a11 * y2 - a12 * y1) / det;
    if (C2 < 0 || !std::isfinite(C2)) {
        C2 = 0;
        C1 = y1 / a11;
    } else if (C1 < 0) {
        C1 = 0;
        C2 = y2 / a22;
    }
    rep.C_first = C1;
    rep.C_second = C2;
    for (std::size_t q = 0; q < U.size(); ++q) rep.max_model_ratio = std::max(rep.max_model_ratio, 1.0 / (C1 * U[q] + C2 * W[q]));
    return rep;
}

// ---- finite-time WKB phase ----

struct WkbResult {
    std::vector<double> r, theta; // grid
    std::vector<double> phi;      // phi(s, r_i, theta_k), row-major in (i, k)
    double s = 0;
    double max_defect = 0; // max |phi(s) - phi(0) + s p|
    double C_observed = 0; // max_defect R / s^2
};

struct WkbOptions {
    std::size_t nr = 9, ntheta = 9;
    double V_lo = -0.2, V_hi = 0.2;
    double tol = 1e-12;
    double newton_tol = 1e-11;
    int max_newton = 30;
};

// Solution of d_s phi + p(x, d_x phi) = 0, phi(0) = r rho + theta eta, on the shell
// [R, 2R] x V by characteristics. With X(s, y) = x the action integral reduces to
// phi(s, x) = y . xi + s p(y, xi) because p is quadratic in the momenta.
inline WkbResult wkb_phase(const ChartMetric2D& m, double R, double rho, double eta, double s, const WkbOptions& o = {})
{
    if (!(R > m.domain_inner())) throw std::domain_error("wkb_phase: R must exceed R_M");
    WkbResult w;
    w.s = s;
    w.r = linspace(R, 2 * R, o.nr);
    w.theta = linspace(o.V_lo, o.V_hi, o.ntheta);
    w.phi.assign(o.nr * o.ntheta, 0);
    std::vector<double> defect(o.nr * o.ntheta, 0);
    parallel_for(o.nr * o.ntheta, [&](std::size_t q) {
        const double x0 = w.r[q / o.ntheta], x1 = w.theta[q % o.ntheta];
        const double p0 = principal_symbol(m, {x0, x1, rho, eta});
        if (s == 0) {
            w.phi[q] = x0 * rho + x1 * eta;
            return;
        }
        auto X = [&](double y0, double y1) {
            auto z = integrate_flow(m, {y0, y1, rho, eta}, s, o.tol);
            return std::array<double, 2>{z.r, z.theta};
        };
        // seed: one explicit Euler step backwards
        const ChartValue gv = m.eval(x0, x1);
        double y0 = x0 - 2 * s * rho, y1 = x1 - 2 * s * gv.g * eta / (x0 * x0);
        double res = 1e300;
        int it = 0;
        for (; it < o.max_newton; ++it) {
            auto F = X(y0, y1);
            const double e0 = F[0] - x0, e1 = F[1] - x1;
            res = std::max(std::abs(e0) / x0, std::abs(e1));
            if (res < o.newton_tol) break;
            const double h0 = 1e-6 * y0, h1 = 1e-6;
            auto Fa = X(y0 + h0, y1), Fb = X(y0, y1 + h1);
            const double J00 = (Fa[0] - F[0]) / h0, J10 = (Fa[1] - F[1]) / h0;
            const double J01 = (Fb[0] - F[0]) / h1, J11 = (Fb[1] - F[1]) / h1;
            const double det = J00 * J11 - J01 * J10;
            y0 -= (J11 * e0 - J01 * e1) / det;
            y1 -= (-J10 * e0 + J00 * e1) / det;
            if (!(y0 > m.domain_inner())) break;
        }
        if (!(res < 1e3 * o.newton_tol)) {
            std::ostringstream msg;
            msg << "wkb_phase: position map inversion failed at (" << x0 << ", " << x1 << "), residual " << res
                << "; |s| is beyond the short-time window";
            throw std::runtime_error(msg.str());
        }
        const double py = principal_symbol(m, {y0, y1, rho, eta});
        w.phi[q] = y0 * rho + y1 * eta + s * py;
        defect[q] = std::abs(w.phi[q] - (x0 * rho + x1 * eta) + s * p0);
    });
    for (double d : defect) w.max_defect = std::max(w.max_defect, d);
    w.C_observed = s == 0 ? 0 : w.max_defect * R / (s * s);
    return w;
}

} // namespace conic
