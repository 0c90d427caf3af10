#pragma once

#include <chrono>
#include <filesystem>
#include <string>

#include "conic/harness/experiments.hpp"
#include "conic/harness/io.hpp"
#include "conic/harness/parallel.hpp"
#include "conic/harness/suite.hpp"

namespace conic::harness {

struct RunOutcome {
    std::filesystem::path dir;
    RunManifest manifest;
};

inline void apply_threads(const Config& c)
{
    const auto t = c.integer("run.threads");
    if (t < 0) throw ConfigError("run.threads must be >= 0");
    set_pool_size(static_cast<unsigned>(t));
}

// Tables are written in order; a table name used twice gets its run tag prepended.
inline void write_tables(const std::filesystem::path& dir, const std::string& tag, const std::vector<CsvTable>& tables,
                         std::vector<OutputEntry>& index)
{
    for (const auto& t : tables) {
        const std::string name = (tag.empty() ? "" : tag + "_") + t.name + ".csv";
        const std::string bytes = t.text();
        write_file(dir / name, bytes);
        index.push_back({name, content_hash(bytes)});
    }
}

inline void write_manifest(const std::filesystem::path& dir, const RunManifest& m)
{
    write_file(dir / "manifest.json", m.to_json().dump(2) + "\n");
}

inline RunOutcome run_experiment(const std::string& subcommand, const Config& config, const std::filesystem::path& out_root)
{
    const auto it = registry().find(subcommand);
    if (it == registry().end()) throw ConfigError("unknown subcommand '" + subcommand + "'");
    apply_threads(config);
    RunOutcome o;
    const auto wall = std::chrono::system_clock::now();
    const auto t0 = std::chrono::steady_clock::now();
    auto res = it->second.fn(config);
    o.manifest.wall_clock_seconds = detail::seconds_since(t0);
    o.manifest.experiment = subcommand;
    o.manifest.code_version = code_version();
    o.manifest.seed = detail::seed(config);
    o.manifest.started_utc = utc_stamp(wall, false);
    o.manifest.config = config;
    o.manifest.parameters = res.parameters;
    o.manifest.checks = res.checks;
    o.dir = make_run_dir(out_root, subcommand, wall);
    write_tables(o.dir, "", res.tables, o.manifest.outputs);
    write_manifest(o.dir, o.manifest);
    return o;
}

struct SuiteOutcome {
    std::filesystem::path dir;
    SuiteResult result;
};

inline SuiteOutcome run_suite_to(const Config& config, const std::string& level, const std::filesystem::path& out_root)
{
    apply_threads(config);
    SuiteOutcome o;
    const auto wall = std::chrono::system_clock::now();
    const auto t0 = std::chrono::steady_clock::now();
    o.result = run_suite(config, level);

    RunManifest m;
    m.wall_clock_seconds = detail::seconds_since(t0);
    m.experiment = "suite-" + level;
    m.code_version = code_version();
    m.seed = detail::seed(config);
    m.started_utc = utc_stamp(wall, false);
    m.config = config;
    m.parameters = {{"level", level}, {"level_overrides", level_overrides(config, level)}};
    m.checks.push_back(o.result.gate);
    CsvTable summary{"summary", {"criterion", "title", "pass", "observed", "required"}, {}};
    summary.add({0LL, std::string("symbol-class gate"), static_cast<long long>(o.result.gate.pass), o.result.gate.observed,
                 o.result.gate.required});
    CsvTable checks{"checks", {"criterion", "check", "pass", "observed", "required"}, {}};
    for (const auto& c : o.result.criteria) {
        summary.add({static_cast<long long>(c.id), c.title, static_cast<long long>(c.pass), c.observed(), c.required()});
        for (const auto& k : c.checks) {
            checks.add({static_cast<long long>(c.id), k.name, static_cast<long long>(k.pass), k.observed, k.required});
            m.checks.push_back({std::to_string(c.id) + ":" + k.name, k.pass, k.observed, k.required});
        }
    }
    o.dir = make_run_dir(out_root, m.experiment, wall);
    // timings go to the manifest only, so CSV bytes stay reproducible
    write_tables(o.dir, "", {summary, checks}, m.outputs);
    for (std::size_t i = 0; i < o.result.runs.size(); ++i) {
        const auto& [tag, r] = o.result.runs[i];
        write_tables(o.dir, std::to_string(i + 1) + "_" + tag, r.tables, m.outputs);
    }
    m.parameters["criterion_seconds"] = nlohmann::json::object();
    for (const auto& c : o.result.criteria) m.parameters["criterion_seconds"][std::to_string(c.id)] = c.seconds;
    write_manifest(o.dir, m);
    return o;
}

} // namespace conic::harness
