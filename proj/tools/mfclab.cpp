#include <fmt/format.h>

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "mfclab/lab.hpp"

using namespace mfclab;

namespace {

void print_run(const std::string& title, const RunReport& r) {
    fmt::print("{} [{}] {:.1f}s\n", title, r.pass() ? "PASS" : "FAIL", r.wall_clock);
    if (!r.error.empty()) fmt::print("  error: {}\n", r.error);
    auto j = r.to_json();
    for (const auto& c : j.at("checks"))
        fmt::print("  {} {}: {}\n", c.at("pass").get<bool>() ? "ok  " : "FAIL", c.at("name").get<std::string>(),
                   c.at("text").get<std::string>());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mfclab: mean-field control experiments"};
    app.require_subcommand(1);

    std::string config_path;
    auto* run = app.add_subcommand("run", "run one experiment from a JSON config");
    run->add_option("config", config_path, "config file")->required()->check(CLI::ExistingFile);

    std::string suite_name = "all", suite_out = "out";
    std::uint64_t suite_seed = 7;
    auto* su = app.add_subcommand("suite", "run acceptance suites");
    su->add_option("name", suite_name, "suite name or 'all'")->required();
    su->add_option("--seed", suite_seed, "master seed");
    su->add_option("--out", suite_out, "output directory");

    std::string csv, svg, xcol, ycol, title;
    bool loglog = false;
    auto* pl = app.add_subcommand("plot", "render a CSV table as SVG");
    pl->add_option("csv", csv, "input table")->required()->check(CLI::ExistingFile);
    pl->add_flag("--loglog", loglog, "log-log axes with fitted slope");
    pl->add_option("-o,--out", svg, "output SVG (default: <csv>.svg)");
    pl->add_option("--x", xcol, "x column (default: first)");
    pl->add_option("--y", ycol, "y column (default: second)");
    pl->add_option("--title", title);

    int dim = 1;
    auto* ex = app.add_subcommand("exponents", "print rate exponents");
    ex->add_option("--d", dim, "dimension")->required()->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            json j;
            try {
                j = json::parse(read_file(config_path));
            } catch (const json::parse_error& e) {
                throw SchemaError(std::string("config: ") + e.what());
            }
            auto cfg = ExperimentConfig::parse(j);
            auto r = run_experiment(cfg);
            print_run(cfg.kind, r);
            fmt::print("  report: {}\n", (cfg.output_dir / "report.json").string());
            return r.pass() ? 0 : 1;
        }
        if (su->parsed()) {
            auto s = suite(suite_name, suite_seed, suite_out);
            for (std::size_t i = 0; i < s.runs.size(); ++i)
                print_run(fmt::format("{:>2} {}", s.entries[i].criterion, s.entries[i].name), s.runs[i]);
            fs::create_directories(suite_out);
            write_file(fs::path(suite_out) / ("suite_" + suite_name + ".json"), s.to_json().dump(2) + "\n");
            return s.pass() ? 0 : 1;
        }
        if (pl->parsed()) {
            if (svg.empty()) svg = fs::path(csv).replace_extension(".svg").string();
            auto r = emit_plot(csv, svg, {xcol, ycol, loglog, title});
            fmt::print("{}{}\n", svg, r.fitted ? "  " + r.label : "");
            return 0;
        }
        if (ex->parsed()) {
            std::cout << exponents_json(dim).dump(2) << "\n";
            return 0;
        }
    } catch (const SchemaError& e) {
        fmt::print(stderr, "schema error: {}\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 2;
    }
    return 0;
}
