#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "conic/harness/config.hpp"

namespace conic::harness {

inline constexpr int kCsvSchema = 1;

using Cell = std::variant<double, long long, std::string>;

// Shortest round-trip text for doubles, so CSV bytes depend only on the values.
inline std::string format_double(double x)
{
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, x);
        if (std::strtod(buf, nullptr) == x) break;
    }
    return buf;
}

inline std::string format_cell(const Cell& c)
{
    if (auto d = std::get_if<double>(&c)) return format_double(*d);
    if (auto i = std::get_if<long long>(&c)) return std::to_string(*i);
    const auto& s = std::get<std::string>(c);
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
}

struct CsvTable {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;

    void add(std::vector<Cell> row)
    {
        if (row.size() != columns.size())
            throw std::logic_error("csv table " + name + ": row has " + std::to_string(row.size()) + " cells, expected " +
                                   std::to_string(columns.size()));
        rows.push_back(std::move(row));
    }

    std::string text() const
    {
        std::ostringstream os;
        os << "# schema=" << kCsvSchema << "\n";
        for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
        os << "\n";
        for (const auto& r : rows) {
            for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << format_cell(r[i]);
            os << "\n";
        }
        return os.str();
    }
};

inline std::string content_hash(std::string_view bytes)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << "fnv1a64:" << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

inline void write_file(const std::filesystem::path& p, std::string_view bytes)
{
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

struct Check {
    std::string name;
    bool pass = false;
    std::string observed;
    std::string required;
};

struct OutputEntry {
    std::string path; // relative to the run directory
    std::string hash;
};

struct RunManifest {
    std::string experiment;
    std::string code_version;
    std::uint64_t seed = 0;
    std::string started_utc;
    double wall_clock_seconds = 0;
    Config config;
    nlohmann::json parameters; // grid and tolerance knobs the experiment read
    std::vector<OutputEntry> outputs;
    std::vector<Check> checks;

    bool pass() const
    {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }

    nlohmann::json to_json() const
    {
        nlohmann::json j;
        j["experiment"] = experiment;
        j["code_version"] = code_version;
        j["seed"] = seed;
        j["started_utc"] = started_utc;
        j["wall_clock_seconds"] = wall_clock_seconds;
        j["config"] = harness::to_json(config.tree());
        j["config_toml"] = config.to_toml();
        j["parameters"] = parameters;
        j["outputs"] = nlohmann::json::array();
        for (const auto& o : outputs) j["outputs"].push_back({{"path", o.path}, {"hash", o.hash}});
        j["checks"] = nlohmann::json::array();
        for (const auto& c : checks)
            j["checks"].push_back({{"name", c.name}, {"pass", c.pass}, {"observed", c.observed}, {"required", c.required}});
        j["pass"] = pass();
        return j;
    }
};

inline std::string utc_stamp(std::chrono::system_clock::time_point t, bool compact)
{
    const std::time_t tt = std::chrono::system_clock::to_time_t(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, compact ? "%Y%m%dT%H%M%SZ" : "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// <root>/<experiment>-<timestamp>, with a numeric suffix if that already exists.
inline std::filesystem::path make_run_dir(const std::filesystem::path& root, const std::string& experiment,
                                          std::chrono::system_clock::time_point t)
{
    const std::string base = experiment + "-" + utc_stamp(t, true);
    std::filesystem::path p = root / base;
    for (int k = 2; std::filesystem::exists(p); ++k) p = root / (base + "-" + std::to_string(k));
    std::filesystem::create_directories(p);
    return p;
}

inline std::string code_version()
{
#ifdef CONIC_VERSION
    return CONIC_VERSION;
#else
    return "unknown";
#endif
}

} // namespace conic::harness
