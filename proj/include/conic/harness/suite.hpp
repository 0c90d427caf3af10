#pragma once

#include <chrono>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include <boost/math/special_functions/bessel.hpp>

#include "conic/harness/experiments.hpp"

namespace conic::harness {

struct CriterionResult {
    int id = 0;
    std::string title;
    bool pass = false;
    std::vector<Check> checks; // each prefixed by the metric or sub-experiment it ran on
    double seconds = 0;

    // first failing check, or a compact summary when everything passed
    std::string observed() const
    {
        for (const auto& c : checks)
            if (!c.pass) return c.name + " = " + c.observed;
        std::string s;
        for (std::size_t i = 0; i < checks.size() && i < 3; ++i) s += (i ? "; " : "") + checks[i].name + " = " + checks[i].observed;
        if (checks.size() > 3) s += "; ...";
        return s;
    }
    std::string required() const
    {
        for (const auto& c : checks)
            if (!c.pass) return c.required;
        return "all " + std::to_string(checks.size()) + " checks";
    }
};

struct SuiteResult {
    std::string level;
    Check gate;
    std::vector<CriterionResult> criteria;
    std::deque<std::pair<std::string, ExperimentResult>> runs; // every experiment run, for the artifacts

    bool pass() const
    {
        if (!gate.pass) return false;
        for (const auto& c : criteria)
            if (!c.pass) return false;
        return true;
    }
};

// Fails for profiles outside the symbol class, e.g. nu = 0.
inline Check metric_gate(const Config& c)
{
    const auto m = warped_from_config(c);
    const auto g = symbol_class_gate(m.profile, m.r_flat);
    std::string observed = g.message;
    if (observed.empty()) {
        observed = std::string(family_name(m.profile.family)) + ", fitted exponents";
        for (const auto& f : g.fit) observed += f.identically_zero ? " zero" : " " + detail::num(f.exponent);
    }
    return {"symbol-class-gate", g.pass, observed, "perturbation in S^{-nu}, nu > 0"};
}

namespace detail {

inline const std::vector<std::string> kFlat{"metric.family=\"flat\"", "metric.amplitude=0.0", "metric.angular=0.0"};
inline const std::vector<std::string> kWarped{"metric.family=\"power_perturb\"", "metric.amplitude=0.3", "metric.nu=1.0",
                                               "metric.r_flat=1.0", "metric.angular=0.0"};

inline std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b)
{
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

class SuiteRunner {
public:
    SuiteRunner(const Config& base, std::vector<std::string> level_overrides, SuiteResult& out)
        : base_(base), level_(std::move(level_overrides)), out_(out)
    {
    }

    // Runs one experiment on the base config plus pinned and level overrides; returns its checks
    // prefixed by `tag`.
    const ExperimentResult& run(const std::string& tag, const std::string& subcommand, const std::vector<std::string>& pinned)
    {
        const auto& e = registry().at(subcommand);
        toml::table t = base_.tree();
        for (const auto& o : pinned) apply_override(t, o, e.section);
        for (const auto& o : level_) apply_override(t, o, e.section);
        out_.runs.emplace_back(tag, e.fn(Config(std::move(t))));
        return out_.runs.back().second;
    }

    void criterion(int id, std::string title, const std::function<void(std::vector<Check>&)>& body)
    {
        CriterionResult r;
        r.id = id;
        r.title = std::move(title);
        const auto t0 = std::chrono::steady_clock::now();
        try {
            body(r.checks);
        } catch (const std::exception& ex) {
            r.checks.push_back({"exception", false, ex.what(), "no error"});
        }
        r.seconds = seconds_since(t0);
        r.pass = !r.checks.empty();
        for (const auto& c : r.checks) r.pass = r.pass && c.pass;
        out_.criteria.push_back(std::move(r));
    }

    static void take(std::vector<Check>& into, const std::string& tag, const ExperimentResult& e, const std::vector<std::string>& names = {})
    {
        for (const auto& c : e.checks) {
            if (!names.empty() && std::find(names.begin(), names.end(), c.name) == names.end()) continue;
            into.push_back({tag + "/" + c.name, c.pass, c.observed, c.required});
        }
    }

    static void take_prefix(std::vector<Check>& into, const std::string& tag, const ExperimentResult& e, const std::string& prefix)
    {
        for (const auto& c : e.checks)
            if (c.name.rfind(prefix, 0) == 0) into.push_back({tag + "/" + c.name, c.pass, c.observed, c.required});
    }

private:
    const Config& base_;
    std::vector<std::string> level_;
    SuiteResult& out_;
};

// Flat Dirichlet spectrum against closed forms and the second-order rate on the warped metric.
inline void spectral_oracles(std::vector<Check>& out, double dr)
{
    const double R = 40;
    const auto flat = flat_warped(3);
    const auto l0 = mode_eigenvalues(flat, 0, R, dr, 20);
    const auto l1 = mode_eigenvalues(flat, 1, R, dr, 20);
    double e0 = 0, e1 = 0;
    for (int k = 1; k <= 20; ++k) {
        const double a = std::pow(k * std::numbers::pi / R, 2);
        const double b = std::pow(boost::math::cyl_bessel_j_zero(1.5, k) / R, 2);
        e0 = std::max(e0, std::abs(l0[k - 1] / a - 1));
        e1 = std::max(e1, std::abs(l1[k - 1] / b - 1));
    }
    out.push_back(at_most("flat-l0-rel-error", e0, 1e-3));
    out.push_back(at_most("flat-l1-rel-error", e1, 5e-3));
    const auto w = make_warped(MetricFamily::power_perturb, 3, 0.3, 1, 1);
    double order = INFINITY;
    for (int ell : {0, 1}) {
        const auto a = mode_eigenvalues(w, ell, R, 2 * dr, 20), b = mode_eigenvalues(w, ell, R, dr, 20), c = mode_eigenvalues(w, ell, R, dr / 2, 20);
        for (int k = 0; k < 20; ++k) order = std::min(order, std::log2(std::abs(a[k] - b[k]) / std::abs(b[k] - c[k])));
    }
    out.push_back(at_least("warped-halving-order", order, 1.8));
}

} // namespace detail

inline std::vector<std::string> level_overrides(const Config& c, const std::string& level)
{
    const std::string key = "suite." + level + ".overrides";
    if (!c.has(key)) throw ConfigError("unknown suite level '" + level + "'");
    std::vector<std::string> out;
    for (const auto& e : *c.tree().at_path(key).as_array()) {
        if (!e.is_string()) throw ConfigError(key + " must hold strings");
        out.push_back(e.as_string()->get());
    }
    return out;
}

inline SuiteResult run_suite(const Config& base, const std::string& level)
{
    using namespace detail;
    SuiteResult res;
    res.level = level;
    res.gate = metric_gate(base);
    if (!res.gate.pass) return res;
    SuiteRunner s(base, level_overrides(base, level), res);
    const bool fast = level == "fast";

    s.criterion(1, "flat flow oracle", [&](auto& out) {
        SuiteRunner::take(out, "flat", s.run("flat", "flow", kFlat));
    });
    s.criterion(2, "scattering-map oracle", [&](auto& out) {
        SuiteRunner::take(out, "flat", s.run("flat", "scatter-map", kFlat));
    });
    const ExperimentResult* warped_eikonal = nullptr;
    s.criterion(3, "eikonal oracle and residuals", [&](auto& out) {
        const auto& f = s.run("flat", "eikonal", kFlat + std::vector<std::string>{"V=[-0.1, 0.1]"});
        SuiteRunner::take(out, "flat", f, {"flat-closed-form", "hj-residual", "generating-identity"});
        warped_eikonal = &s.run("warped", "eikonal", kWarped + std::vector<std::string>{"metric.angular=0.2"});
        SuiteRunner::take(out, "warped", *warped_eikonal, {"hj-residual", "generating-identity"});
    });
    s.criterion(4, "expansion orders", [&](auto& out) {
        if (!warped_eikonal) throw std::runtime_error("warped eikonal table unavailable");
        SuiteRunner::take_prefix(out, "warped", *warped_eikonal, "order:");
    });
    s.criterion(5, "transport", [&](auto& out) {
        SuiteRunner::take(out, "flat", s.run("flat", "transport", kFlat), {"flat-a0-is-one"});
        const auto& w = s.run("warped", "transport", kWarped + std::vector<std::string>{"metric.nu=0.5", "metric.angular=0.2"});
        SuiteRunner::take(out, "warped", w, {"b-tau-exponent", "b-r-exponent"});
    });
    s.criterion(6, "oscillatory dispersion", [&](auto& out) {
        SuiteRunner::take(out, "flat", s.run("flat", "oscillatory", kFlat));
        SuiteRunner::take(out, "warped", s.run("warped", "oscillatory", kWarped));
        SuiteRunner::take(out, "radial", s.run("radial", "oscillatory", kWarped + std::vector<std::string>{"regime=\"radial_sep\""}));
        SuiteRunner::take(out, "angular", s.run("angular", "oscillatory", kFlat + std::vector<std::string>{"regime=\"angular_sep\""}));
    });
    s.criterion(7, "spectral oracles", [&](auto& out) { spectral_oracles(out, fast ? 0.04 : 0.02); });
    s.criterion(8, "Littlewood-Paley", [&](auto& out) {
        SuiteRunner::take(out, "warped", s.run("warped", "lp-check", kWarped));
    });
    s.criterion(9, "resolvent and smoothing", [&](auto& out) {
        SuiteRunner::take(out, "resolvent", s.run("warped", "resolvent", kWarped));
        SuiteRunner::take(out, "smoothing", s.run("warped", "smoothing", kWarped));
    });
    s.criterion(10, "dispersive decay", [&](auto& out) {
        SuiteRunner::take(out, "flat", s.run("flat", "dispersive", kFlat), {"gaussian-closed-form"});
        SuiteRunner::take(out, "warped", s.run("warped", "dispersive", kWarped));
    });
    s.criterion(11, "Strichartz", [&](auto& out) {
        SuiteRunner::take(out, "flat", s.run("flat", "strichartz", kFlat));
        SuiteRunner::take(out, "warped", s.run("warped", "strichartz", kWarped));
    });
    s.criterion(12, "NLS", [&](auto& out) {
        SuiteRunner::take(out, "warped", s.run("warped", "nls", kWarped));
    });
    s.criterion(13, "normal form", [&](auto& out) {
        SuiteRunner::take(out, "A=1+0.2<x>^-1", s.run("normal-form", "normal-form", {"amplitude=0.2", "nu=1.0"}));
    });
    return res;
}

} // namespace conic::harness
