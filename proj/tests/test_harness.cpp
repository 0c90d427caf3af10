#include <cstdlib>
#include <filesystem>
#include <random>

#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>

#include "conic/harness/run.hpp"

using namespace conic;
using namespace conic::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    auto p = fs::temp_directory_path() / ("conic_harness_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fs::path write_temp(const fs::path& dir, const std::string& name, const std::string& text)
{
    write_file(dir / name, text);
    return dir / name;
}

Config reference(const std::vector<std::string>& sets = {}, std::string_view exp = "")
{
    return load_config(default_reference_path(), "", sets, exp);
}

std::string message_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

struct Cli {
    int status;
    std::string output;
};

Cli cli(const std::string& args)
{
    const auto log = fs::temp_directory_path() / ("conic_cli_" + std::to_string(::getpid()) + ".log");
    const int raw = std::system((std::string(CONIC_CLI) + " " + args + " > " + log.string() + " 2>&1").c_str());
    return {WEXITSTATUS(raw), read_text(log)};
}

} // namespace

TEST(Config, ReferenceLoadsAndTypes)
{
    const auto c = reference();
    EXPECT_EQ(c.str("metric.family"), "power_perturb");
    EXPECT_EQ(c.integer("metric.n"), 3);
    EXPECT_EQ(c.list("experiment.strichartz.pair"), (std::vector<double>{2, 6}));
    EXPECT_EQ(c.int_list("experiment.strichartz.bands").size(), 9u);
    EXPECT_THROW(c.num("metric.family"), ConfigError);
    EXPECT_THROW(c.num("metric.nope"), ConfigError);
}

TEST(Config, ParseErrorCarriesLineAndColumn)
{
    const auto d = scratch("parse");
    const auto bad = write_temp(d, "bad.toml", "[metric]\nnu = 1.0\namplitude = = 3\n");
    const auto msg = message_of([&] { load_config(default_reference_path(), bad, {}); });
    EXPECT_NE(msg.find("bad.toml:3:"), std::string::npos) << msg;
}

TEST(Config, UnknownKeysAndTypeMismatchesAreErrors)
{
    const auto d = scratch("keys");
    const auto typo = write_temp(d, "typo.toml", "[metric]\nnuu = 1.0\n");
    auto msg = message_of([&] { load_config(default_reference_path(), typo, {}); });
    EXPECT_NE(msg.find("unknown key 'metric.nuu'"), std::string::npos) << msg;
    EXPECT_NE(msg.find("typo.toml:2:"), std::string::npos) << msg;

    const auto section = write_temp(d, "section.toml", "[experiment.flw]\nsamples = 3\n");
    EXPECT_NE(message_of([&] { load_config(default_reference_path(), section, {}); }).find("experiment.flw"), std::string::npos);

    const auto type = write_temp(d, "type.toml", "[metric]\nnu = \"one\"\n");
    EXPECT_NE(message_of([&] { load_config(default_reference_path(), type, {}); }).find("type mismatch for 'metric.nu'"),
              std::string::npos);
    // floats never narrow to integer keys
    EXPECT_FALSE(message_of([&] { reference({"metric.n=3.5"}); }).empty());

    // integers widen to float keys and float arrays
    const auto wide = write_temp(d, "wide.toml", "[metric]\nnu = 2\n[experiment.strichartz]\npair = [4, 3]\n");
    const auto c = load_config(default_reference_path(), wide, {});
    EXPECT_EQ(c.num("metric.nu"), 2.0);
    EXPECT_TRUE(c.tree().at_path("metric.nu").is_floating_point());
    EXPECT_EQ(c.list("experiment.strichartz.pair"), (std::vector<double>{4, 3}));
}

TEST(Config, SetResolution)
{
    const auto c = reference({"pair=2,6", "metric.nu=0.5", "bands=[0, 4]"}, "strichartz");
    EXPECT_EQ(c.list("experiment.strichartz.pair"), (std::vector<double>{2, 6}));
    EXPECT_EQ(c.int_list("experiment.strichartz.bands"), (std::vector<int>{0, 4}));
    EXPECT_EQ(c.num("metric.nu"), 0.5);
    // bare key missing from the experiment section falls through to the root, where it is unknown
    EXPECT_NE(message_of([&] { reference({"mode=none"}, "strichartz"); }).find("unknown key 'mode'"), std::string::npos);
    EXPECT_EQ(reference({"mode=none"}, "dispersive").str("experiment.dispersive.mode"), "none");
    EXPECT_FALSE(message_of([] { reference({"family=\"flat\""}); }).empty());
}

TEST(Config, SetErrors)
{
    EXPECT_FALSE(message_of([] { reference({"metric.nu"}); }).empty());
    EXPECT_FALSE(message_of([] { reference({"metric.nu=abc"}); }).empty());
    EXPECT_FALSE(message_of([] { reference({"metric=3"}); }).empty());
}

TEST(Csv, SchemaHeaderAndRoundTrip)
{
    CsvTable t{"x", {"a", "b", "c"}, {}};
    t.add({1.5, 2LL, std::string("p,q")});
    t.add({std::numeric_limits<double>::quiet_NaN(), -3LL, std::string("say \"hi\"")});
    EXPECT_EQ(t.text(), "# schema=1\na,b,c\n1.5,2,\"p,q\"\nnan,-3,\"say \"\"hi\"\"\"\n");
    EXPECT_THROW(t.add({1.0}), std::logic_error);

    std::mt19937_64 g(7);
    std::uniform_real_distribution<double> u(-30, 30);
    for (int i = 0; i < 20000; ++i) {
        const double x = std::ldexp(u(g), static_cast<int>(u(g) * 10));
        EXPECT_EQ(std::strtod(format_double(x).c_str(), nullptr), x);
    }
    EXPECT_EQ(format_double(0.1), "0.1");
    EXPECT_EQ(format_double(1e-300), "1e-300");
}

TEST(Manifest, ConfigRoundTripAndIndex)
{
    const auto out = scratch("manifest");
    const auto c = reference({"samples=50", "metric.family=\"flat\"", "metric.amplitude=0.0"}, "flow");
    const auto o = run_experiment("flow", c, out);
    const auto j = nlohmann::json::parse(read_text(o.dir / "manifest.json"));
    EXPECT_EQ(j["experiment"], "flow");
    EXPECT_EQ(j["code_version"], code_version());
    EXPECT_EQ(j["seed"], 20240607u);
    EXPECT_TRUE(j["pass"].get<bool>());
    const auto reparsed = parse_toml(j["config_toml"].get<std::string>(), "manifest");
    EXPECT_EQ(reparsed, c.tree());
    EXPECT_EQ(to_json(reparsed), j["config"]);
    EXPECT_EQ(j["parameters"]["experiment"]["samples"], 50);
    ASSERT_EQ(j["outputs"].size(), 1u);
    const auto path = o.dir / j["outputs"][0]["path"].get<std::string>();
    EXPECT_EQ(content_hash(read_text(path)), j["outputs"][0]["hash"]);
    EXPECT_EQ(read_text(path).rfind("# schema=1\nsample_id,", 0), 0u);

    // the embedded config reproduces the run
    const auto again = run_experiment("flow", Config(reparsed), out);
    EXPECT_NE(again.dir, o.dir);
    EXPECT_EQ(again.manifest.outputs[0].hash, o.manifest.outputs[0].hash);
}

TEST(Determinism, IdenticalHashesAcrossRunsAndPoolSizes)
{
    const auto out = scratch("determinism");
    const auto a = run_experiment("flow", reference({"samples=64", "run.threads=1"}, "flow"), out);
    const auto b = run_experiment("flow", reference({"samples=64", "run.threads=3"}, "flow"), out);
    ASSERT_EQ(a.manifest.outputs.size(), b.manifest.outputs.size());
    for (std::size_t i = 0; i < a.manifest.outputs.size(); ++i) EXPECT_EQ(a.manifest.outputs[i].hash, b.manifest.outputs[i].hash);
    const auto x = run_experiment("lp-check", reference({"draws=3", "R_max=40.0", "dr=0.2"}, "lp_check"), out);
    const auto y = run_experiment("lp-check", reference({"draws=3", "R_max=40.0", "dr=0.2"}, "lp_check"), out);
    for (std::size_t i = 0; i < x.manifest.outputs.size(); ++i) EXPECT_EQ(x.manifest.outputs[i].hash, y.manifest.outputs[i].hash);
    // a different seed changes the random draws
    const auto z = run_experiment("lp-check", reference({"draws=3", "R_max=40.0", "dr=0.2", "run.seed=5"}, "lp_check"), out);
    EXPECT_NE(x.manifest.outputs.back().hash, z.manifest.outputs.back().hash);
    set_pool_size(0);
}

TEST(Suite, GateRejectsNuZeroFirst)
{
    const auto r = run_suite(reference({"metric.nu=0.0"}), "fast");
    EXPECT_FALSE(r.gate.pass);
    EXPECT_NE(r.gate.observed.find("nu must be positive"), std::string::npos) << r.gate.observed;
    EXPECT_TRUE(r.criteria.empty());
    EXPECT_FALSE(r.pass());
    EXPECT_TRUE(metric_gate(reference()).pass);
    EXPECT_TRUE(metric_gate(reference({"metric.family=\"flat\""})).pass);
}

TEST(Suite, LevelOverridesAreValidAssignments)
{
    const auto c = reference();
    for (const std::string level : {"fast", "full"}) {
        toml::table t = c.tree();
        for (const auto& o : level_overrides(c, level)) EXPECT_NO_THROW(apply_override(t, o));
    }
    EXPECT_THROW(level_overrides(c, "medium"), ConfigError);
}

TEST(Experiments, RegistryCoversSubcommandsAndSections)
{
    const std::vector<std::string> names{"flow", "scatter-map", "eikonal", "transport", "wkb", "oscillatory", "lp-check",
                                         "resolvent", "smoothing", "sobolev", "dispersive", "strichartz", "nls", "normal-form"};
    EXPECT_EQ(registry().size(), names.size());
    const auto c = reference();
    for (const auto& n : names) {
        ASSERT_TRUE(registry().count(n)) << n;
        EXPECT_TRUE(c.has("experiment." + registry().at(n).section)) << n;
    }
}

TEST(Experiments, CheapRunsPass)
{
    const auto flat = std::vector<std::string>{"metric.family=\"flat\"", "metric.amplitude=0.0"};
    auto with = [&](std::vector<std::string> v) {
        v.insert(v.end(), flat.begin(), flat.end());
        return v;
    };
    for (const auto& [name, sets] : std::vector<std::pair<std::string, std::vector<std::string>>>{
             {"normal-form", {}},
             {"scatter-map", with({})},
             {"transport", with({})},
             {"wkb", {}},
             {"smoothing", {"bands=[0, 2]"}},
         }) {
        const auto r = registry().at(name).fn(reference(sets, registry().at(name).section));
        EXPECT_TRUE(r.pass()) << name;
        EXPECT_FALSE(r.tables.empty()) << name;
        for (const auto& c : r.checks) EXPECT_TRUE(c.pass) << name << "/" << c.name << " " << c.observed << " vs " << c.required;
    }
}

TEST(Experiments, BadValuesAreConfigErrors)
{
    EXPECT_THROW(run_oscillatory(reference({"regime=\"sideways\""}, "oscillatory")), ConfigError);
    EXPECT_THROW(run_dispersive(reference({"mode=\"inner\""}, "dispersive")), ConfigError);
    EXPECT_THROW(run_strichartz(reference({"pair=[2.0]"}, "strichartz")), ConfigError);
    // admissibility failure surfaces the residual
    try {
        run_strichartz(reference({"pair=2,2", "bands=[0]"}, "strichartz"));
        ADD_FAILURE() << "inadmissible pair accepted";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("2/p + n/q - n/2 = 1"), std::string::npos) << e.what();
    }
}

TEST(Cli, SmokeAndDiagnostics)
{
    const auto out = scratch("cli");
    const std::string src = CONIC_SOURCE_DIR;
    auto r = cli("flow --config " + src + "/config/flat.toml --set samples=100 --out " + out.string());
    EXPECT_EQ(r.status, 0) << r.output;
    EXPECT_NE(r.output.find("PASS flat-oracle"), std::string::npos) << r.output;

    r = cli("strichartz --config " + src + "/config/warped.toml --set pair=2,6 --set bands=[0,2] --out " + out.string());
    EXPECT_EQ(r.status, 0) << r.output;
    bool found = false;
    for (const auto& e : fs::directory_iterator(out))
        if (e.path().filename().string().rfind("strichartz-", 0) == 0) {
            found = true;
            EXPECT_TRUE(fs::exists(e.path() / "strichartz.csv"));
            EXPECT_TRUE(fs::exists(e.path() / "manifest.json"));
        }
    EXPECT_TRUE(found);

    const auto bad = write_temp(out, "broken.toml", "[grid]\ndr = 0.1\nR_max 80\n");
    r = cli("flow --config " + bad.string() + " --out " + out.string());
    EXPECT_NE(r.status, 0);
    EXPECT_NE(r.output.find("broken.toml:3:"), std::string::npos) << r.output;

    r = cli("flow --set metric.nuu=1 --out " + out.string());
    EXPECT_NE(r.status, 0);
    EXPECT_NE(r.output.find("unknown key"), std::string::npos) << r.output;

    r = cli("oscillatory --regime radial_sep --h-ladder 0.5,0.25 --set metric.family=\"flat\" --out " + out.string());
    EXPECT_NE(r.output.find("h-order"), std::string::npos) << r.output;
}
