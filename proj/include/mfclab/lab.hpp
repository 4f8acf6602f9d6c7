#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfclab/io.hpp"

namespace mfclab {

// raised for config problems; message names the field
struct SchemaError : Error {
    using Error::Error;
};

constexpr int kConfigSchema = 1;

struct ExperimentConfig {
    std::string kind;
    std::uint64_t seed = 0;
    fs::path output_dir;
    json params;  // validated, defaults filled in

    // validates everything before anything is computed or written
    static ExperimentConfig parse(const json& j);
    json echo() const;
};

const std::vector<std::string>& experiment_kinds();
// the full parameter set for `kind` with its defaults
json default_params(const std::string& kind);

struct Check {
    std::string name;
    bool pass = false;
    double measured = 0.0;
    std::string relation;  // "<=", ">=", "in"
    double lo = 0.0, hi = 0.0;  // bound(s); lo only for <= and >=
};

struct RunReport {
    json config;
    std::vector<Check> checks;
    std::vector<std::string> artifacts;
    std::string error;
    double wall_clock = 0.0;  // seconds; kept out of report.json

    bool pass() const;
    json to_json() const;
};

// writes <output_dir>/<artifacts> and report.json; on an exception the
// partial artifacts are removed and report.json records the error
RunReport run_experiment(const ExperimentConfig& cfg);

struct SuiteEntry {
    int criterion = 0;
    std::string name;
    std::string kind;
    double budget = 0.0;  // seconds
};
const std::vector<SuiteEntry>& suite_entries();

struct SuiteReport {
    std::vector<SuiteEntry> entries;
    std::vector<RunReport> runs;
    bool pass() const;
    json to_json() const;
};
SuiteReport suite(const std::string& name, std::uint64_t seed, const fs::path& out_dir);

struct PlotSpec {
    std::string x, y;  // empty = first / second column
    bool loglog = false;
    std::string title;
};
struct PlotResult {
    double slope = 0.0;
    bool fitted = false;
    std::string label;
};
PlotResult emit_plot(const fs::path& csv, const fs::path& svg, const PlotSpec& spec);

json exponents_json(int d);

}  // namespace mfclab
