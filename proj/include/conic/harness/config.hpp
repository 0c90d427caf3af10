#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <tomlplusplus/toml.hpp>

#include "conic/geometry.hpp"

namespace conic::harness {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string read_text(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Parse errors carry "source:line:column: description".
inline toml::table parse_toml(std::string_view text, std::string_view source)
{
    try {
        return toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        std::ostringstream m;
        m << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
        throw ConfigError(m.str());
    }
}

inline bool is_number(const toml::node& n) { return n.is_integer() || n.is_floating_point(); }

namespace detail {

inline bool compatible(const toml::node& ref, const toml::node& val)
{
    if (is_number(ref)) return is_number(val) && (ref.is_floating_point() || val.is_integer());
    if (ref.is_array()) {
        if (!val.is_array()) return false;
        const auto& ra = *ref.as_array();
        if (ra.empty()) return true;
        for (const auto& e : *val.as_array())
            if (!compatible(ra[0], e)) return false;
        return true;
    }
    return ref.type() == val.type();
}

inline std::string where(const toml::node& n)
{
    const auto& s = n.source();
    if (!s.path) return "";
    std::ostringstream m;
    m << *s.path << ":" << s.begin.line << ":" << s.begin.column << ": ";
    return m.str();
}

} // namespace detail

// Overlay `over` onto `base`; every key must already exist in `base` with a compatible type.
inline void merge_checked(toml::table& base, const toml::table& over, const std::string& prefix = "")
{
    for (const auto& [k, v] : over) {
        const std::string key = prefix.empty() ? std::string(k.str()) : prefix + "." + std::string(k.str());
        toml::node* ref = base.get(k.str());
        if (!ref) throw ConfigError(detail::where(v) + "unknown key '" + key + "'");
        if (v.is_table()) {
            if (!ref->is_table()) throw ConfigError(detail::where(v) + "'" + key + "' is a value, not a section");
            merge_checked(*ref->as_table(), *v.as_table(), key);
            continue;
        }
        if (ref->is_table()) throw ConfigError(detail::where(v) + "'" + key + "' is a section, not a value");
        if (!detail::compatible(*ref, v)) throw ConfigError(detail::where(v) + "type mismatch for '" + key + "'");
        // integers given for float keys are widened so later lookups see one type
        if (ref->is_floating_point() && v.is_integer())
            base.insert_or_assign(k.str(), static_cast<double>(v.as_integer()->get()));
        else if (ref->is_array() && v.is_array()) {
            toml::array out;
            const bool want_float = !ref->as_array()->empty() && (*ref->as_array())[0].is_floating_point();
            for (const auto& e : *v.as_array()) {
                if (want_float && e.is_integer())
                    out.push_back(static_cast<double>(e.as_integer()->get()));
                else
                    out.push_back(e);
            }
            base.insert_or_assign(k.str(), std::move(out));
        } else {
            base.insert_or_assign(k.str(), v);
        }
    }
}

// "key=value": the value is read as a TOML value; bare words become strings and comma lists
// become arrays. A key without dots is looked up in the experiment section first.
inline void apply_override(toml::table& base, std::string_view assignment, std::string_view experiment = "")
{
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
    std::string key(assignment.substr(0, eq)), value(assignment.substr(eq + 1));
    auto trim = [](std::string& s) {
        s.erase(0, s.find_first_not_of(" \t"));
        s.erase(s.find_last_not_of(" \t") + 1);
    };
    trim(key);
    trim(value);
    if (key.find('.') == std::string::npos && !experiment.empty()) {
        const std::string scoped = "experiment." + std::string(experiment) + "." + key;
        if (base.at_path(scoped)) key = scoped;
    }
    std::vector<std::string> parts;
    for (std::size_t a = 0;;) {
        const auto b = key.find('.', a);
        parts.push_back(key.substr(a, b - a));
        if (b == std::string::npos) break;
        a = b + 1;
    }
    auto parse_value = [&](const std::string& v) -> std::optional<toml::table> {
        try {
            return toml::parse("v = " + v);
        } catch (const toml::parse_error&) {
            return std::nullopt;
        }
    };
    auto t = parse_value(value);
    if (!t && value.find(',') != std::string::npos) t = parse_value("[" + value + "]");
    if (!t) t = parse_value("\"" + value + "\"");
    if (!t) throw ConfigError("--set " + key + ": cannot read value '" + value + "'");
    toml::table over;
    toml::table* cur = &over;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        cur->insert_or_assign(parts[i], toml::table{});
        cur = cur->get(parts[i])->as_table();
    }
    cur->insert_or_assign(parts.back(), *t->get("v"));
    try {
        merge_checked(base, over);
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("--set ") + e.what());
    }
}

inline std::filesystem::path default_reference_path()
{
    if (const char* env = std::getenv("CONIC_DISPERSION_REFERENCE")) return env;
#ifdef CONIC_SOURCE_DIR
    return std::filesystem::path(CONIC_SOURCE_DIR) / "config" / "reference.toml";
#else
    return "config/reference.toml";
#endif
}

class Config {
public:
    Config() = default;
    explicit Config(toml::table t) : tree_(std::move(t)) {}

    const toml::table& tree() const { return tree_; }
    toml::table& tree() { return tree_; }

    bool has(std::string_view key) const { return static_cast<bool>(tree_.at_path(key)); }

    double num(std::string_view key) const
    {
        const auto n = node(key);
        if (auto d = n.value<double>()) return *d;
        throw ConfigError("config key '" + std::string(key) + "' is not a number");
    }
    long long integer(std::string_view key) const
    {
        const auto n = node(key);
        if (n.is_integer()) return n.as_integer()->get();
        throw ConfigError("config key '" + std::string(key) + "' is not an integer");
    }
    std::string str(std::string_view key) const
    {
        const auto n = node(key);
        if (n.is_string()) return n.as_string()->get();
        throw ConfigError("config key '" + std::string(key) + "' is not a string");
    }
    bool flag(std::string_view key) const
    {
        const auto n = node(key);
        if (n.is_boolean()) return n.as_boolean()->get();
        throw ConfigError("config key '" + std::string(key) + "' is not a boolean");
    }
    std::vector<double> list(std::string_view key) const
    {
        const auto n = node(key);
        if (!n.is_array()) throw ConfigError("config key '" + std::string(key) + "' is not an array");
        std::vector<double> out;
        for (const auto& e : *n.as_array()) {
            auto d = e.value<double>();
            if (!d) throw ConfigError("config key '" + std::string(key) + "' has a non-numeric entry");
            out.push_back(*d);
        }
        return out;
    }
    std::vector<int> int_list(std::string_view key) const
    {
        std::vector<int> out;
        for (double d : list(key)) {
            if (d != std::floor(d)) throw ConfigError("config key '" + std::string(key) + "' needs integers");
            out.push_back(static_cast<int>(d));
        }
        return out;
    }

    std::string to_toml() const
    {
        std::ostringstream os;
        os << tree_;
        return os.str();
    }

private:
    toml::node_view<const toml::node> node(std::string_view key) const
    {
        auto n = tree_.at_path(key);
        if (!n) throw ConfigError("missing config key '" + std::string(key) + "'");
        return n;
    }

    toml::table tree_;
};

// reference file, then the user file, then --set overrides
inline Config load_config(const std::filesystem::path& reference, const std::filesystem::path& user,
                          const std::vector<std::string>& overrides, std::string_view experiment = "")
{
    toml::table base = parse_toml(read_text(reference), reference.string());
    if (!user.empty()) merge_checked(base, parse_toml(read_text(user), user.string()));
    for (const auto& o : overrides) apply_override(base, o, experiment);
    return Config(std::move(base));
}

inline nlohmann::json to_json(const toml::node& n)
{
    if (n.is_table()) {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, v] : *n.as_table()) j[std::string(k.str())] = to_json(v);
        return j;
    }
    if (n.is_array()) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& e : *n.as_array()) j.push_back(to_json(e));
        return j;
    }
    if (n.is_integer()) return n.as_integer()->get();
    if (n.is_floating_point()) return n.as_floating_point()->get();
    if (n.is_boolean()) return n.as_boolean()->get();
    if (n.is_string()) return n.as_string()->get();
    std::ostringstream os;
    n.visit([&](const auto& v) { os << v; });
    return os.str();
}

inline WarpedMetric warped_from_config(const Config& c)
{
    return make_warped(parse_family(c.str("metric.family")), static_cast<int>(c.integer("metric.n")), c.num("metric.amplitude"),
                       c.num("metric.nu"), c.num("metric.r_flat"));
}

inline ChartMetric2D chart_from_config(const Config& c)
{
    return make_chart(parse_family(c.str("metric.family")), c.num("metric.amplitude"), c.num("metric.nu"), c.num("metric.r_flat"),
                      1.0, c.num("metric.angular"));
}

} // namespace conic::harness
