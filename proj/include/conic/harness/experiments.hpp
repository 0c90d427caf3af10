#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conic/dynamics.hpp"
#include "conic/flow.hpp"
#include "conic/geometry.hpp"
#include "conic/harness/config.hpp"
#include "conic/harness/io.hpp"
#include "conic/oscillatory.hpp"
#include "conic/phase.hpp"
#include "conic/spectral.hpp"

namespace conic::harness {

struct ExperimentResult {
    std::vector<CsvTable> tables;
    std::vector<Check> checks;
    nlohmann::json parameters = nlohmann::json::object();

    bool pass() const
    {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
    const Check* find(const std::string& name) const
    {
        for (const auto& c : checks)
            if (c.name == name) return &c;
        return nullptr;
    }
};

using ExperimentFn = std::function<ExperimentResult(const Config&)>;

namespace detail {

inline std::string num(double x)
{
    std::ostringstream os;
    os << std::setprecision(4) << x;
    return os.str();
}

inline Check at_most(const std::string& name, double observed, double bound)
{
    return {name, observed <= bound, num(observed), "<= " + num(bound)};
}

inline Check at_least(const std::string& name, double observed, double bound)
{
    return {name, observed >= bound, num(observed), ">= " + num(bound)};
}

inline Check within(const std::string& name, double observed, double target, double tol)
{
    return {name, std::abs(observed - target) <= tol, num(observed), num(target) + " +- " + num(tol)};
}

inline std::uint64_t seed(const Config& c) { return static_cast<std::uint64_t>(c.integer("run.seed")); }

inline nlohmann::json section(const Config& c, const std::string& path)
{
    auto n = c.tree().at_path(path);
    return n ? to_json(*n.node()) : nlohmann::json();
}

inline nlohmann::json params(const Config& c, const std::string& experiment)
{
    return {{"metric", section(c, "metric")}, {"grid", section(c, "grid")}, {"experiment", section(c, "experiment." + experiment)}};
}

inline ThetaDomain theta_domain(const Config& c, const std::string& sec)
{
    ThetaDomain d;
    const auto V = c.list(sec + ".V");
    if (V.size() != 2) throw ConfigError(sec + ".V needs two entries");
    d.R = c.num(sec + ".R");
    d.V_lo = V[0];
    d.V_hi = V[1];
    d.eps_sep = c.num(sec + ".eps_sep");
    return d;
}

// free motion in Cartesian coordinates, x(s) = x0 + 2 s xi
inline PhasePoint straight_line(const PhasePoint& x, double s)
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

inline double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace detail

// ---------------------------------------------------------------------------

inline ExperimentResult run_flow(const Config& c)
{
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentResult res;
    res.parameters = detail::params(c, "flow");
    const auto m = chart_from_config(c);
    const auto V = c.list("experiment.flow.V"), I = c.list("experiment.flow.I");
    ConicRegion reg{RegionKind::strongly_outgoing, c.num("experiment.flow.R"), V.at(0), V.at(1), I.at(0), I.at(1),
                    c.num("experiment.flow.eps_strong"), 1};
    const double tol = c.num("experiment.flow.tol"), tf = c.num("experiment.flow.time_factor");
    const auto n = static_cast<std::size_t>(c.integer("experiment.flow.samples"));
    CounterRng rng(detail::seed(c), 1);
    std::vector<PhasePoint> xs(n);
    std::vector<double> ss(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = sample_region(reg, m, rng);
        ss[i] = rng.uniform(0, tf * xs[i].r);
    }
    std::vector<PhasePoint> ys(n);
    parallel_for(n, [&](std::size_t i) { ys[i] = integrate_flow(m, xs[i], ss[i], tol); });
    CsvTable t{"trajectories", {"sample_id", "r", "theta", "rho", "eta", "s", "r_s", "theta_s", "rho_s", "eta_s", "energy_drift", "oracle_error"}, {}};
    double drift = 0, oracle = 0;
    const bool flat = m.is_flat();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& x = xs[i];
        const auto& y = ys[i];
        const double p0 = principal_symbol(m, x), p1 = principal_symbol(m, y);
        const double d = std::abs(p1 - p0) / p0;
        double e = NAN;
        if (flat) {
            const auto o = detail::straight_line(x, ss[i]);
            e = std::max({std::abs(y.r - o.r) / o.r, std::abs(y.theta - o.theta), std::abs(y.rho - o.rho) / std::abs(o.rho),
                          std::abs(y.eta - o.eta) / (std::abs(o.eta) + x.r)});
            oracle = std::max(oracle, e);
        }
        drift = std::max(drift, d);
        t.add({static_cast<long long>(i), x.r, x.theta, x.rho, x.eta, ss[i], y.r, y.theta, y.rho, y.eta, d, e});
    }
    res.tables.push_back(std::move(t));
    res.checks.push_back(detail::at_most("energy-conservation", drift, 1e-8));
    if (flat) res.checks.push_back(detail::at_most("flat-oracle", oracle, 1e-8));
    res.checks.push_back(detail::at_most("runtime-seconds", detail::seconds_since(t0), 5));
    return res;
}

inline ExperimentResult run_scatter_map(const Config& c)
{
    ExperimentResult res;
    res.parameters = detail::params(c, "scatter_map");
    const auto m = chart_from_config(c);
    ScatterOptions o;
    o.tol = c.num("experiment.scatter_map.tol");
    o.richardson_levels = static_cast<int>(c.integer("experiment.scatter_map.richardson_levels"));
    const double theta = c.num("experiment.scatter_map.theta"), rho = c.num("experiment.scatter_map.rho");
    std::vector<PhasePoint> xs;
    for (double r : c.list("experiment.scatter_map.r"))
        for (double k : c.list("experiment.scatter_map.eta_over_r")) xs.push_back({r, theta, rho, k * r});
    std::vector<ScatteringData> out(xs.size());
    parallel_for(xs.size(), [&](std::size_t i) { out[i] = scattering_map(m, xs[i], +1, o); });
    CsvTable t{"scattering_map", {"r", "theta", "rho", "eta", "r_bar", "theta_bar", "rho_bar", "eta_bar", "extrapolation_error", "converged", "oracle_error"}, {}};
    double oracle = 0;
    bool eta_zero_exact = true, converged = true;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const auto& x = xs[i];
        const auto& d = out[i];
        double e = NAN;
        if (m.is_flat()) {
            // |xi|, arg xi, angular momentum and x0 . xi / |xi|
            const double k = std::hypot(x.rho, x.eta / x.r);
            e = std::max({std::abs(d.rho_bar - k), std::abs(d.theta_bar - (x.theta + std::atan2(x.eta / x.r, x.rho))),
                          std::abs(d.eta_bar - x.eta) / (1 + std::abs(x.eta)), std::abs(d.r_bar - x.r * x.rho / k) / x.r});
            oracle = std::max(oracle, e);
        }
        if (x.eta == 0 && !(d.r_bar == x.r && d.theta_bar == x.theta && d.rho_bar == x.rho && d.eta_bar == 0)) eta_zero_exact = false;
        converged = converged && d.converged;
        t.add({x.r, x.theta, x.rho, x.eta, d.r_bar, d.theta_bar, d.rho_bar, d.eta_bar, d.extrapolation_error,
               static_cast<long long>(d.converged), e});
    }
    res.tables.push_back(std::move(t));
    res.checks.push_back({"converged", converged, converged ? "all" : "some failed", "all"});
    res.checks.push_back({"eta-zero-fixed", eta_zero_exact, eta_zero_exact ? "exact" : "moved", "exact"});
    if (m.is_flat()) res.checks.push_back(detail::at_most("flat-oracle", oracle, 1e-6));
    return res;
}

inline ExperimentResult run_eikonal(const Config& c)
{
    ExperimentResult res;
    res.parameters = detail::params(c, "eikonal");
    const auto m = chart_from_config(c);
    const auto dom = detail::theta_domain(c, "experiment.eikonal");
    EikonalGridSpec g;
    g.nr = static_cast<std::size_t>(c.integer("experiment.eikonal.nr"));
    g.ntheta = static_cast<std::size_t>(c.integer("experiment.eikonal.ntheta"));
    g.nvartheta = static_cast<std::size_t>(c.integer("experiment.eikonal.nvartheta"));
    g.r_max = c.num("experiment.eikonal.r_max");
    const auto table = build_eikonal(m, dom, g);
    res.checks.push_back(detail::at_most("hj-residual", table.max_hj_residual, 1e-6));
    res.checks.push_back(detail::at_most("generating-identity", table.max_generating_residual, 1e-5));
    res.checks.push_back(detail::at_most("path-independence", table.max_circulation, 1e-6));

    const auto cg = c.int_list("experiment.eikonal.check_grid");
    if (cg.size() != 3) throw ConfigError("experiment.eikonal.check_grid needs three entries");
    CsvTable t{"eikonal_samples", {"r", "theta", "vartheta", "psi", "d_r", "d_theta", "d_vartheta", "oracle_error"}, {}};
    double err = 0;
    for (double r : geomspace(dom.R, g.r_max, cg[0]))
        for (double th : linspace(dom.V_lo, dom.V_hi, cg[1]))
            for (double vt : linspace(dom.V_lo, dom.V_hi, cg[2])) {
                const auto v = table.eval(r, th, vt);
                double e = NAN;
                if (m.is_flat()) {
                    e = std::abs(v.psi - r * std::cos(th - vt));
                    err = std::max(err, e);
                }
                t.add({r, th, vt, v.psi, v.dr, v.dtheta, v.dvartheta, e});
            }
    res.tables.push_back(std::move(t));
    if (m.is_flat()) res.checks.push_back(detail::at_most("flat-closed-form", err, 1e-5));

    const auto rep = check_eikonal_expansions(table);
    CsvTable f{"expansion_orders", {"coefficient", "exponent", "expected", "identically_zero", "max_abs", "pass"}, {}};
    for (const auto& e : rep.fits) {
        f.add({e.name, e.fit.exponent, e.expected, static_cast<long long>(e.fit.identically_zero), e.max_abs, static_cast<long long>(e.pass)});
        if (!m.is_flat()) {
            const bool ok = e.pass && (e.fit.identically_zero || std::abs(e.fit.exponent - e.expected) <= 0.15);
            res.checks.push_back({"order:" + e.name, ok, e.fit.identically_zero ? "identically zero" : detail::num(e.fit.exponent),
                                  detail::num(e.expected) + " +- 0.15"});
        }
    }
    res.tables.push_back(std::move(f));
    return res;
}

inline ExperimentResult run_transport(const Config& c)
{
    ExperimentResult res;
    res.parameters = detail::params(c, "transport");
    const auto m = chart_from_config(c);
    TransportOptions o;
    o.n = static_cast<int>(c.integer("experiment.transport.n"));
    const auto p = c.list("experiment.transport.point");
    if (p.size() != 4) throw ConfigError("experiment.transport.point needs r, theta, varrho, vartheta");
    const auto tr = solve_transport(m, p[0], p[1], p[2], p[3], 1.0, nullptr, o);
    CsvTable a{"amplitude_ladder", {"horizon", "amplitude", "int_b"}, {}};
    for (std::size_t k = 0; k < tr.horizons.size(); ++k) a.add({tr.horizons[k], tr.ladder[k], tr.ladder_int_b[k]});
    res.tables.push_back(std::move(a));
    if (m.is_flat() && o.n == 2) res.checks.push_back(detail::at_most("flat-a0-is-one", std::abs(tr.value - 1), 1e-8));

    BDecaySweep sw;
    sw.r0 = c.list("experiment.transport.r0");
    sw.tau = c.list("experiment.transport.tau");
    sw.theta = c.num("experiment.transport.theta");
    sw.delta = c.num("experiment.transport.delta");
    const auto rep = fit_b_decay(m, sw, o);
    CsvTable b{"b_samples", {"r0", "tau", "b"}, {}};
    for (const auto& s : rep.samples) b.add({s[0], s[1], s[2]});
    res.tables.push_back(std::move(b));
    CsvTable f{"b_fit", {"tau_exponent", "r_exponent", "C_first", "C_second", "max_model_ratio"}, {}};
    f.add({rep.tau_exponent, rep.r_exponent, rep.C_first, rep.C_second, rep.max_model_ratio});
    res.tables.push_back(std::move(f));
    if (!m.is_flat()) {
        const double target = -(1 + m.nu());
        res.checks.push_back(detail::within("b-tau-exponent", rep.tau_exponent, target, 0.2));
        res.checks.push_back(detail::within("b-r-exponent", rep.r_exponent, target, 0.2));
    }
    return res;
}

inline ExperimentResult run_wkb(const Config& c)
{
    ExperimentResult res;
    res.parameters = detail::params(c, "wkb");
    const auto m = chart_from_config(c);
    const double R = c.num("experiment.wkb.R"), rho = c.num("experiment.wkb.rho"), eta = c.num("experiment.wkb.eta");
    CsvTable t{"wkb_defect", {"s", "max_defect", "C_observed"}, {}};
    std::vector<std::pair<double, double>> pts;
    double C = 0;
    for (double s : c.list("experiment.wkb.s")) {
        const auto w = wkb_phase(m, R, rho, eta, s);
        t.add({s, w.max_defect, w.C_observed});
        if (w.max_defect > 0) pts.emplace_back(std::abs(s), w.max_defect);
        C = std::max(C, w.C_observed);
    }
    res.tables.push_back(std::move(t));
    res.checks.push_back(detail::at_most("defect-constant", C, 50));
    if (pts.size() >= 2 && !m.is_flat()) res.checks.push_back(detail::within("defect-order", power_fit(pts).exponent, 2, 0.15));
    return res;
}

inline ExperimentResult run_oscillatory(const Config& c)
{
    ExperimentResult res;
    res.parameters = detail::params(c, "oscillatory");
    const auto m = chart_from_config(c);
    const std::string regime = c.str("experiment.oscillatory.regime");
    const auto table = build_eikonal(m, detail::theta_domain(c, "experiment.oscillatory"), {});
    double eps = c.num("experiment.oscillatory.eps"), eps_p = c.num("experiment.oscillatory.eps_prime");
    const auto h_ladder = c.list("experiment.oscillatory.h_ladder"), s_ladder = c.list("experiment.oscillatory.s_ladder");
    auto samples_table = [](const std::vector<ScanSample>& ss) {
        CsvTable t{"kernel_samples", {"h", "s", "r", "theta", "r_prime", "theta_prime", "abs_value", "bound_value", "converged", "below_floor"}, {}};
        for (const auto& x : ss)
            t.add({x.h, x.s, x.r, x.theta, x.r_prime, x.theta_prime, x.abs_value, x.bound_value, static_cast<long long>(x.converged),
                   static_cast<long long>(x.below_floor)});
        return t;
    };
    if (regime == "dispersive" || regime == "parametrix") {
        if (eps == 0) eps = 0.3;
        if (eps_p == 0) eps_p = 0.3;
        const auto k = make_kernel_spec(table, 1.0, eps, eps_p);
        if (regime == "dispersive") {
            DispersiveScan sc;
            if (!h_ladder.empty()) sc.h_grid = h_ladder;
            if (!s_ladder.empty()) sc.hs_large = s_ladder;
            const auto rep = dispersive_scan(k, sc);
            res.tables.push_back(samples_table(rep.samples));
            CsvTable f{"dispersive_fit", {"C_fit", "small_s_exponent", "large_hs_exponent", "small_s_modulus_C", "modulus_bound"}, {}};
            f.add({rep.C_fit, rep.small_s_exponent, rep.large_hs_exponent, rep.small_s_modulus_C, rep.modulus_bound});
            res.tables.push_back(std::move(f));
            res.checks.push_back({"converged", rep.all_converged, rep.all_converged ? "all" : "some failed", "all"});
            res.checks.push_back(detail::within("large-hs-exponent", rep.large_hs_exponent, -1.0, 0.15));
        } else {
            ParametrixScan sc;
            if (!s_ladder.empty()) sc.s_grid = s_ladder;
            const auto rep = parametrix_weight_scan(k, sc);
            CsvTable f{"parametrix", {"s", "weighted_sup"}, {}};
            for (std::size_t i = 0; i < rep.weighted_sup.size(); ++i) f.add({sc.s_grid[i], rep.weighted_sup[i]});
            res.tables.push_back(std::move(f));
            res.checks.push_back({"weighted-kernel-bounded", rep.pass, detail::num(rep.max_weighted), "bounded in s"});
            res.checks.push_back({"phase-lower-bound", rep.lower_bound_ok, detail::num(rep.min_lower_ratio), ">= " + detail::num(sc.lower_bound_c)});
        }
        return res;
    }
    NonstationaryRegime g;
    if (regime == "radial_sep") {
        g = NonstationaryRegime::radial_sep;
        if (eps == 0) eps = 0.1;
        if (eps_p == 0) eps_p = 0.1;
    } else if (regime == "angular_sep" || regime == "stationary") {
        g = regime == "stationary" ? NonstationaryRegime::stationary : NonstationaryRegime::angular_sep;
        if (eps == 0) eps = 0.25;
        if (eps_p == 0) eps_p = eps * eps;
    } else {
        throw ConfigError("experiment.oscillatory.regime: unknown regime '" + regime + "'");
    }
    auto sc = default_nonstationary_scan(g);
    if (!h_ladder.empty()) sc.h_grid = h_ladder;
    if (!s_ladder.empty()) sc.scale = s_ladder;
    const auto rep = nonstationary_scan(make_kernel_spec(table, 1.0, eps, eps_p), sc);
    res.tables.push_back(samples_table(rep.samples));
    CsvTable f{"nonstationary_fit", {"regime", "h_exponent", "spatial_exponent"}, {}};
    f.add({regime, rep.h_fit.exponent, rep.spatial_fit.exponent});
    res.tables.push_back(std::move(f));
    if (g == NonstationaryRegime::stationary) {
        // negative control: the kernel grows as h decreases
        res.checks.push_back(detail::at_least("stationary-growth", rep.h_fit.exponent, 0.5));
    } else {
        res.checks.push_back(detail::at_most("h-order", rep.h_fit.exponent, -3));
        res.checks.push_back(detail::at_most("spatial-order", rep.spatial_fit.exponent, -3));
    }
    return res;
}

inline std::shared_ptr<const ModeBasis> basis_for(const Config& c, int ell_max, double R_max, double dr, const WarpedMetric* m = nullptr)
{
    return build_mode_basis(m ? *m : warped_from_config(c), ell_max, R_max, dr, c.str("grid.cache_dir"));
}

inline ExperimentResult run_lp_check(const Config& c)
{
    ExperimentResult res;
    res.parameters = detail::params(c, "lp_check");
    const auto m = warped_from_config(c);
    const std::string dir_name = c.str("experiment.lp_check.direction");
    if (dir_name != "low" && dir_name != "high") throw ConfigError("experiment.lp_check.direction must be low or high");
    const auto dir = dir_name == "low" ? LpDirection::low : LpDirection::high;
    auto b = basis_for(c, static_cast<int>(c.integer("experiment.lp_check.ell_max")), c.num("experiment.lp_check.R_max"),
                       c.num("experiment.lp_check.dr"));

    // telescoping at sampled spectral points
    std::vector<double> lams;
    for (const auto& op : b->ops)
        for (std::size_t k = 0; k < op.modes(); k += 97) lams.push_back(op.lambda[k]);
    std::erase_if(lams, [](double x) { return !(x > 0); });
    const auto tel = lp_reconstruct(lp_f0, lams, dir, 60);
    res.checks.push_back(detail::at_most("telescoping-residual", tel.max_residual, 4 * std::numeric_limits<double>::epsilon()));
    res.checks.push_back(detail::at_most("telescoping-tail", tel.max_tail, 0));

    const int J = static_cast<int>(c.integer("experiment.lp_check.orthogonality_bands"));
    double ortho = 0;
    CsvTable o{"band_products", {"j", "l", "norm"}, {}};
    for (int j = 0; j < J; ++j)
        for (int l = 0; l < J; ++l) {
            const double v = band_product_norm(*b, j, l);
            o.add({static_cast<long long>(j), static_cast<long long>(l), v});
            if (std::abs(j - l) >= 3) ortho = std::max(ortho, v);
        }
    res.tables.push_back(std::move(o));
    res.checks.push_back(detail::at_most("quasi-orthogonality", ortho, 1e-10));

    const int n = m.n;
    const double q = dir == LpDirection::low ? 2.0 * n / (n - 2) : 4.0;
    const auto bands = c.int_list("experiment.lp_check.bands");
    const auto draws = c.integer("experiment.lp_check.draws");
    CsvTable t{"square_function", {"draw", "q", "lhs", "rhs", "ratio"}, {}};
    double worst = 0;
    for (long long d = 0; d < draws; ++d) {
        const auto v = random_multiband_state(b, bands, detail::seed(c) + static_cast<std::uint64_t>(d));
        const auto rep = lp_inequality_probe(v, q, dir);
        t.add({d, q, rep.lhs, rep.rhs, rep.ratio});
        worst = std::max(worst, rep.ratio);
    }
    res.tables.push_back(std::move(t));
    res.checks.push_back(detail::at_most("square-function-ratio", worst, 10));
    return res;
}

inline ExperimentResult run_resolvent(const Config& c)
{
    ExperimentResult res;
    res.parameters = detail::params(c, "resolvent");
    auto b = basis_for(c, 0, c.num("grid.R_max"), c.num("grid.dr"));
    ResolventOptions o;
    o.deltas = c.list("experiment.resolvent.deltas");
    o.weight_exponent = c.num("experiment.resolvent.weight_exponent");
    CsvTable t{"resolvent_norms", {"lambda", "delta", "norm"}, {}};
    CsvTable s{"resolvent_plateau", {"lambda", "window_lo", "window_hi", "plateau", "level"}, {}};
    double lo = INFINITY, hi = 0;
    bool all = true;
    for (double lam : c.list("experiment.resolvent.lambdas")) {
        const auto rep = resolvent_probe(*b, lam, o);
        for (std::size_t i = 0; i < rep.deltas.size(); ++i) t.add({lam, rep.deltas[i], rep.norms[i]});
        s.add({lam, rep.window_lo, rep.window_hi, static_cast<long long>(rep.plateau), rep.plateau_level});
        all = all && rep.plateau;
        lo = std::min(lo, rep.plateau_level);
        hi = std::max(hi, rep.plateau_level);
    }
    res.tables.push_back(std::move(t));
    res.tables.push_back(std::move(s));
    res.checks.push_back({"plateau-exists", all, all ? "every lambda" : "missing", "every lambda"});
    res.checks.push_back({"plateau-spread", hi / lo < 3, detail::num(hi / lo), "< 3"});
    return res;
}

inline ExperimentResult run_smoothing(const Config& c)
{
    ExperimentResult res;
    res.parameters = detail::params(c, "smoothing");
    CsvTable t{"smoothing", {"band", "eps", "T", "ratio", "ratio_half", "increment", "band_mass"}, {}};
    double lo = INFINITY, hi = 0, inc = 0;
    for (int j : c.int_list("experiment.smoothing.bands")) {
        const double eps = std::pow(2.0, -0.5 * j);
        auto b = basis_for(c, 0, c.num("experiment.smoothing.R0") / eps, c.num("experiment.smoothing.dr0") / eps);
        auto u0 = radial_state(b, [&](double r) { return cplx(std::exp(-0.5 * eps * eps * r * r)); });
        const double T = c.num("experiment.smoothing.T0") / (eps * eps);
        const auto rep = smoothing_probe(u0, {j, LpDirection::low}, T);
        t.add({static_cast<long long>(j), eps, T, rep.ratio, rep.ratio_half, rep.increment, rep.band_mass});
        lo = std::min(lo, rep.ratio);
        hi = std::max(hi, rep.ratio);
        inc = std::max(inc, rep.increment);
    }
    res.tables.push_back(std::move(t));
    res.checks.push_back({"doubling-increment", inc < 0.05, detail::num(inc), "< 0.05"});
    res.checks.push_back({"scale-spread", hi / lo < 3, detail::num(hi / lo), "< 3"});
    return res;
}

inline ExperimentResult run_sobolev(const Config& c)
{
    ExperimentResult res;
    res.parameters = detail::params(c, "sobolev");
    auto b = basis_for(c, static_cast<int>(c.integer("experiment.sobolev.ell_max")), c.num("experiment.sobolev.R_max"),
                       c.num("experiment.sobolev.dr"));
    std::vector<FieldState> set;
    for (double w : c.list("experiment.sobolev.widths"))
        set.push_back(radial_state(b, [&](double r) { return cplx(std::exp(-0.5 * r * r / (w * w))); }));
    const auto k = c.integer("experiment.sobolev.random_states");
    for (long long d = 0; d < k; ++d) set.push_back(random_multiband_state(b, {0, 2, 4}, detail::seed(c) + static_cast<std::uint64_t>(d), 2));
    const auto rep = sobolev_probe(set);
    const auto ext = sobolev_extremizer(set.front());
    CsvTable t{"sobolev", {"state", "ratio"}, {}};
    for (std::size_t i = 0; i < rep.ratios.size(); ++i) t.add({static_cast<long long>(i), rep.ratios[i]});
    t.add({std::string("extremizer"), ext.ratio});
    res.tables.push_back(std::move(t));
    res.checks.push_back({"extremizer-converged", ext.converged, std::to_string(ext.iterations) + " iterations", "converged"});
    res.checks.push_back(detail::at_most("probe-below-extremizer", rep.max_ratio, ext.ratio * (1 + 1e-9)));
    return res;
}

inline ExperimentResult run_dispersive(const Config& c)
{
    ExperimentResult res;
    res.parameters = detail::params(c, "dispersive");
    const auto m = warped_from_config(c);
    const std::string mode = c.str("experiment.dispersive.mode");
    if (mode != "exterior" && mode != "none") throw ConfigError("experiment.dispersive.mode must be exterior or none");
    auto b = basis_for(c, 0, c.num("experiment.dispersive.R_max"), c.num("experiment.dispersive.dr"));
    const DyadicBand band{static_cast<int>(c.integer("experiment.dispersive.band")), LpDirection::low};
    const auto u0 = band_data(b, band, mode == "exterior" ? CutoffMode::exterior : CutoffMode::none);
    const auto tl = c.list("experiment.dispersive.t_ladder");
    if (tl.size() != 2) throw ConfigError("experiment.dispersive.t_ladder needs [t_min, t_max]");
    const auto rep = dispersive_fit(u0, geomspace(tl[0], tl[1], static_cast<std::size_t>(c.integer("experiment.dispersive.samples"))));
    CsvTable t{"dispersive_decay", {"t", "sup", "ratio", "cone_ok"}, {}};
    for (const auto& s : rep.samples) t.add({s.t, s.sup, s.ratio, static_cast<long long>(s.cone_ok)});
    res.tables.push_back(std::move(t));
    res.checks.push_back(detail::at_least("window-decades", rep.decades, 1 - 1e-9));
    res.checks.push_back(detail::at_most("decay-exponent", rep.fit.exponent, rep.target + 0.2));

    if (m.is_flat()) {
        // e^{-r^2/2} evolves to sup (1 + 4t^2)^{-n/4}
        auto g = basis_for(c, 0, c.num("experiment.dispersive.gaussian_R_max"), c.num("experiment.dispersive.gaussian_dr"));
        const auto u = gaussian_state(g, 1);
        const double s0 = lq_norm(u, INFINITY);
        CsvTable gt{"gaussian_sup", {"t", "sup", "exact", "rel_error"}, {}};
        double worst = 0;
        for (double t : linspace(0, c.num("experiment.dispersive.gaussian_T"), 21)) {
            const double s = lq_norm(propagate(u, t), INFINITY) / s0;
            const double ex = std::pow(1 + 4 * t * t, -0.25 * m.n);
            gt.add({t, s, ex, s / ex - 1});
            worst = std::max(worst, std::abs(s / ex - 1));
        }
        res.tables.push_back(std::move(gt));
        res.checks.push_back(detail::at_most("gaussian-closed-form", worst, 0.01));
    }
    return res;
}

inline ExperimentResult run_strichartz(const Config& c)
{
    ExperimentResult res;
    res.parameters = detail::params(c, "strichartz");
    StrichartzConfig s;
    s.metric = warped_from_config(c);
    const auto pair = c.list("experiment.strichartz.pair");
    if (pair.size() != 2) throw ConfigError("experiment.strichartz.pair needs (p, q)");
    s.p = pair[0];
    s.q = pair[1];
    s.bands = c.int_list("experiment.strichartz.bands");
    s.R0 = c.num("experiment.strichartz.R0");
    s.dr0 = c.num("experiment.strichartz.dr0");
    s.width = c.num("experiment.strichartz.width");
    s.cache_dir = c.str("grid.cache_dir");
    const auto rep = strichartz_experiment(s);
    CsvTable t{"strichartz", {"band", "eps", "T", "ratio", "ratio_half", "increment", "lambda_max", "r_support"}, {}};
    for (const auto& b : rep.bands)
        t.add({static_cast<long long>(b.index), b.scale, b.T, b.ratio, b.ratio_half, b.increment, b.cone.lambda_max, b.cone.r_support});
    res.tables.push_back(std::move(t));
    res.checks.push_back(detail::at_most("band-spread", rep.spread, 5));
    res.checks.push_back({"doubling-increment", rep.max_increment < 0.05, detail::num(rep.max_increment), "< 0.05"});
    return res;
}

inline FieldState nls_data(const Config& c, std::shared_ptr<const ModeBasis> b, double norm)
{
    const std::string kind = c.str("experiment.nls.data");
    const double w = c.num("experiment.nls.width"), tf = c.num("experiment.nls.focus");
    FieldState u;
    if (kind == "pair")
        u = axpy(1.0, gaussian_state(b, w, tf), gaussian_state(b, w, -tf));
    else if (kind == "chirp")
        u = gaussian_state(b, w, -tf);
    else if (kind == "gaussian")
        u = gaussian_state(b, w);
    else
        throw ConfigError("experiment.nls.data must be pair, chirp or gaussian");
    return scaled(u, norm / l2_norm(u));
}

inline ExperimentResult run_nls(const Config& c)
{
    ExperimentResult res;
    res.parameters = detail::params(c, "nls");
    const auto m = warped_from_config(c);
    NlsOptions o;
    o.sigma = c.num("experiment.nls.sigma");
    o.T = c.num("experiment.nls.T");
    o.dt = c.num("experiment.nls.dt");
    o.stages = static_cast<std::size_t>(c.integer("experiment.nls.stages"));
    o.tol = c.num("experiment.nls.tol");
    o.max_iter = static_cast<int>(c.integer("experiment.nls.max_iter"));
    const double dr = c.num("experiment.nls.dr");

    auto b = basis_for(c, 0, c.num("experiment.nls.R_max"), dr);
    const auto run = nls_picard(nls_data(c, b, c.num("experiment.nls.delta")), o);
    CsvTable it{"picard_iterates", {"iterate", "sup_increment", "x_increment"}, {}};
    for (std::size_t k = 0; k < run.increments.size(); ++k) it.add({static_cast<long long>(k + 1), run.increments[k], run.x_increments[k]});
    res.tables.push_back(std::move(it));
    res.checks.push_back({"converged", run.converged && run.iterations <= 12, std::to_string(run.iterations) + " iterations", "<= 12"});
    res.checks.push_back(detail::at_most("mass-drift", run.mass_drift, 10 * o.tol));
    res.checks.push_back(detail::at_most("pde-residual", nls_pde_residual(run), 10 * o.tol));

    const auto sc = scattering_detect(run, static_cast<int>(c.integer("experiment.nls.ladder_levels")));
    CsvTable lt{"scattering_ladder", {"T", "plus_residual", "minus_residual"}, {}};
    for (std::size_t k = 0; k < sc.times.size(); ++k) lt.add({sc.times[k], sc.plus_residuals[k], sc.minus_residuals[k]});
    res.tables.push_back(std::move(lt));
    res.checks.push_back(detail::at_least("ladder-factor-plus", sc.min_plus_factor, 2));
    res.checks.push_back(detail::at_least("ladder-factor-minus", sc.min_minus_factor, 2));

    // contraction factor of the first Picard step against the data radius
    auto bs = basis_for(c, 0, c.num("experiment.nls.sweep_R_max"), dr);
    NlsOptions os = o;
    os.T = c.num("experiment.nls.sweep_T");
    CsvTable st{"contraction_sweep", {"radius", "contraction"}, {}};
    std::vector<std::pair<double, double>> pts;
    for (double d : c.list("experiment.nls.sweep")) {
        const auto r = nls_picard(scaled(gaussian_state(bs, c.num("experiment.nls.width")), d / l2_norm(gaussian_state(bs, c.num("experiment.nls.width")))), os);
        const double f = r.contraction.empty() ? NAN : r.contraction.front();
        st.add({d, f});
        pts.emplace_back(d, f);
    }
    res.tables.push_back(std::move(st));
    if (pts.size() >= 2) res.checks.push_back(detail::within("contraction-exponent", power_fit(pts).exponent, 4.0 / m.n, 0.2));
    return res;
}

inline ExperimentResult run_normal_form(const Config& c)
{
    ExperimentResult res;
    res.parameters = detail::params(c, "normal_form");
    const double a = c.num("experiment.normal_form.amplitude"), nu = c.num("experiment.normal_form.nu");
    NormalFormOptions o;
    o.x_min = c.num("experiment.normal_form.x_min");
    o.x_max = c.num("experiment.normal_form.x_max");
    o.samples = static_cast<std::size_t>(c.integer("experiment.normal_form.samples"));
    auto dA = [a, nu](double x) { return a * std::pow(japanese(x), -nu); };
    const auto rep = normal_form_step(dA, nu, c.num("experiment.normal_form.R"), o);
    CsvTable t{"normal_form", {"x", "A_minus_one", "sigma", "A_next_minus_one"}, {}};
    for (double x : geomspace(o.x_min, o.x_max, o.samples)) t.add({x, dA(x), rep.sigma(x), rep.A_next_minus_one(x)});
    res.tables.push_back(std::move(t));
    CsvTable f{"normal_form_fit", {"exponent_before", "exponent_after", "ratio_min", "ratio_max"}, {}};
    f.add({rep.fit_before.exponent, rep.fit.exponent, rep.ratio_min, rep.ratio_max});
    res.tables.push_back(std::move(f));
    res.checks.push_back(detail::within("exponent-before", rep.fit_before.exponent, -nu, 0.05));
    res.checks.push_back(detail::at_most("exponent-after", rep.fit.exponent, rep.fit_before.exponent - (std::min(nu, 1.0) - 0.2)));
    return res;
}

// subcommand name -> (config section, experiment)
struct ExperimentEntry {
    std::string section;
    ExperimentFn fn;
};

inline const std::map<std::string, ExperimentEntry>& registry()
{
    static const std::map<std::string, ExperimentEntry> r{
        {"flow", {"flow", run_flow}},
        {"scatter-map", {"scatter_map", run_scatter_map}},
        {"eikonal", {"eikonal", run_eikonal}},
        {"transport", {"transport", run_transport}},
        {"wkb", {"wkb", run_wkb}},
        {"oscillatory", {"oscillatory", run_oscillatory}},
        {"lp-check", {"lp_check", run_lp_check}},
        {"resolvent", {"resolvent", run_resolvent}},
        {"smoothing", {"smoothing", run_smoothing}},
        {"sobolev", {"sobolev", run_sobolev}},
        {"dispersive", {"dispersive", run_dispersive}},
        {"strichartz", {"strichartz", run_strichartz}},
        {"nls", {"nls", run_nls}},
        {"normal-form", {"normal_form", run_normal_form}},
    };
    return r;
}

} // namespace conic::harness
