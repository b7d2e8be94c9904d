#pragma once

#include "volsynth/backtest.hpp"
#include "volsynth/ingest.hpp"
#include "volsynth/simlab.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace volsynth::app {

/// A config key: its INI section, default text and a one-line help string.
/// Every key is also a `--key` command-line flag.
struct KeySpec {
    std::string key;
    std::string section;
    std::string default_value;
    std::string help;
};

const std::vector<KeySpec>& config_keys();

using Settings = std::map<std::string, std::string>;

/// Read an INI file. Unknown keys, and keys placed in the wrong section, are
/// ConfigErrors.
Settings read_ini(const std::filesystem::path& path);

struct ExperimentConfig {
    Settings resolved;  // every key, defaults filled in

    std::optional<std::filesystem::path> input;
    std::optional<sim::DgpSpec> simulation;
    ColumnMap columns;
    std::string split;  // fraction in (0,1) or ISO date
    std::vector<std::string> models;
    std::optional<Method> method;
    std::string rv_column;
    int ica_components = 1;
    std::optional<std::size_t> window;
    std::optional<std::size_t> horizon;
    std::size_t refit_interval = 1;
    bt::DemeanScope demean = bt::DemeanScope::Window;
    bool ae_warm_start = false;
    unsigned threads = 0;
    ae::AeHyperparams ae{};
    std::filesystem::path out_dir = "out";
    std::uint64_t seed = 0;
    std::size_t audit_pairs = 5;
};

/// Defaults, then the config file (if any), then `overrides`.
ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& config_file, const Settings& overrides);

/// The resolved config as an INI file that reproduces the run.
void write_resolved_config(const ExperimentConfig& config, const std::filesystem::path& path);

/// Panel from the input file or the simulation spec.
MeasurePanel load_experiment_panel(const ExperimentConfig& config);

/// Models named in the config, resolved against the panel's columns.
std::vector<bt::ModelSpec> resolve_models(const ExperimentConfig& config, const MeasurePanel& panel);

bt::RollingConfig rolling_config(const ExperimentConfig& config, const MeasurePanel& panel);

void cmd_summarize(const ExperimentConfig& config, std::ostream& console);
void cmd_fit(const ExperimentConfig& config, std::ostream& console);
void cmd_backtest(const ExperimentConfig& config, std::ostream& console);
void cmd_simulate(const ExperimentConfig& config, std::ostream& console);
/// Throws LookaheadError on a violation.
void cmd_audit(const ExperimentConfig& config, std::ostream& console);

}  // namespace volsynth::app
