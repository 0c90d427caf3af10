#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "conic/harness/run.hpp"

using namespace conic::harness;

namespace {

std::string join(const std::vector<double>& v)
{
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << format_double(v[i]);
    os << "]";
    return os.str();
}

void print_checks(const std::vector<Check>& checks)
{
    for (const auto& c : checks)
        std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": observed " << c.observed << ", required " << c.required << "\n";
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Dispersive estimates on asymptotically conic manifolds"};
    app.require_subcommand(1);
    std::string config_path, reference_path, out_dir = "out";
    std::vector<std::string> sets;
    app.add_option("--config", config_path, "user TOML file merged over the reference configuration");
    app.add_option("--reference", reference_path, "reference configuration (default: config/reference.toml)");
    app.add_option("--set", sets, "key=value override, repeatable; bare keys refer to the experiment section")->take_all();
    app.add_option("--out", out_dir, "root directory for run outputs");

    std::vector<std::string> names;
    for (const auto& [name, entry] : registry()) {
        auto* sub = app.add_subcommand(name, "run the " + entry.section + " experiment");
        sub->fallthrough();
        names.push_back(name);
    }
    std::string regime;
    std::vector<double> h_ladder, s_ladder;
    auto* osc = app.get_subcommand("oscillatory");
    osc->add_option("--regime", regime, "dispersive | radial_sep | angular_sep | stationary | parametrix");
    osc->add_option("--h-ladder", h_ladder, "semiclassical parameters to scan")->delimiter(',');
    osc->add_option("--s-ladder", s_ladder, "|h s| values or spatial scale factors")->delimiter(',');

    std::string level;
    auto* suite = app.add_subcommand("suite", "run the acceptance criteria");
    suite->fallthrough();
    suite->add_option("--level", level, "fast | full (default: suite.level)");

    CLI11_PARSE(app, argc, argv);

    try {
        const std::filesystem::path ref = reference_path.empty() ? default_reference_path() : std::filesystem::path(reference_path);
        if (suite->parsed()) {
            const Config c = load_config(ref, config_path, sets);
            if (level.empty()) level = c.str("suite.level");
            const auto o = run_suite_to(c, level, out_dir);
            const auto& r = o.result;
            std::cout << (r.gate.pass ? "PASS " : "FAIL ") << "gate " << r.gate.name << ": " << r.gate.observed << "\n";
            for (const auto& k : r.criteria)
                std::cout << (k.pass ? "PASS " : "FAIL ") << "criterion " << k.id << " (" << k.title << "): observed " << k.observed()
                          << ", required " << k.required() << "\n";
            std::cout << "outputs: " << o.dir.string() << "\n";
            return r.pass() ? 0 : 1;
        }
        for (const auto& name : names) {
            if (!app.get_subcommand(name)->parsed()) continue;
            const std::string section = registry().at(name).section;
            if (name == "oscillatory") {
                if (!regime.empty()) sets.push_back("regime=\"" + regime + "\"");
                if (!h_ladder.empty()) sets.push_back("h_ladder=" + join(h_ladder));
                if (!s_ladder.empty()) sets.push_back("s_ladder=" + join(s_ladder));
            }
            const Config c = load_config(ref, config_path, sets, section);
            const auto o = run_experiment(name, c, out_dir);
            print_checks(o.manifest.checks);
            std::cout << "outputs: " << o.dir.string() << "\n";
            return o.manifest.pass() ? 0 : 1;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
