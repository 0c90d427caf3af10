// Acceptance driver: one line per criterion, exit status 0 iff every criterion and the metric gate pass.
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "conic/harness/run.hpp"

using namespace conic::harness;

int main(int argc, char** argv)
{
    CLI::App app{"acceptance criteria"};
    std::string level = "fast", out = "acceptance_out", config;
    std::vector<std::string> sets;
    app.add_option("--level", level)->check(CLI::IsMember({"fast", "full"}));
    app.add_option("--out", out);
    app.add_option("--config", config);
    app.add_option("--set", sets)->take_all();
    CLI11_PARSE(app, argc, argv);

    const Config c = load_config(default_reference_path(), config, sets);
    const auto o = run_suite_to(c, level, out);
    const auto& r = o.result;
    std::cout << (r.gate.pass ? "PASS" : "FAIL") << "  gate  symbol-class: " << r.gate.observed << "\n";
    double total = 0;
    for (const auto& k : r.criteria) {
        total += k.seconds;
        std::cout << (k.pass ? "PASS" : "FAIL") << "  " << std::setw(2) << k.id << "  " << k.title << " [" << std::fixed
                  << std::setprecision(1) << k.seconds << " s]: observed " << k.observed() << "; required " << k.required() << "\n";
        std::cout.unsetf(std::ios::fixed);
        if (!k.pass)
            for (const auto& ch : k.checks)
                if (!ch.pass) std::cout << "        " << ch.name << ": observed " << ch.observed << ", required " << ch.required << "\n";
    }
    if (r.criteria.size() != 13) std::cout << "FAIL  only " << r.criteria.size() << " of 13 criteria ran\n";
    std::cout << "level " << level << ", " << std::fixed << std::setprecision(1) << total << " s, outputs in " << o.dir.string() << "\n";
    return r.pass() && r.criteria.size() == 13 ? 0 : 1;
}
