#include "volsynth/error.hpp"
#include "volsynth/experiment.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>
#include <map>
#include <optional>
#include <string>

namespace {

enum ExitCode : int {
    kOk = 0,
    kOther = 1,
    kConfig = 2,
    kData = 3,
    kNumerical = 4,
    kAudit = 5,
};

}  // namespace

int main(int argc, char** argv) {
    using namespace volsynth;

    CLI::App app{"Synthetic realised measures and RealGARCH volatility backtests"};
    app.require_subcommand(1);
    std::string log_level = "warn";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

    std::string config_path;
    std::map<std::string, std::string> values;

    struct Command {
        const char* name;
        const char* help;
        void (*run)(const app::ExperimentConfig&, std::ostream&);
    };
    const Command commands[] = {
        {"summarize", "summary statistics of returns and log measures", &app::cmd_summarize},
        {"fit", "in-sample estimates for each model", &app::cmd_fit},
        {"backtest", "rolling one-step-ahead forecasts scored by predictive likelihood", &app::cmd_backtest},
        {"simulate", "write a simulated panel and its true variance path", &app::cmd_simulate},
        {"audit", "check that forecasts never use data from their own day or later", &app::cmd_audit},
    };
    std::map<CLI::App*, const Command*> by_sub;
    for (const auto& cmd : commands) {
        auto* sub = app.add_subcommand(cmd.name, cmd.help);
        sub->add_option("--config", config_path, "INI config file")->check(CLI::ExistingFile);
        for (const auto& key : app::config_keys()) {
            sub->add_option("--" + key.key, values[key.key], key.help)->group("Config keys [" + key.section + "]");
        }
        by_sub[sub] = &cmd;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        const Command* cmd = nullptr;
        CLI::App* chosen = nullptr;
        for (auto& [sub, c] : by_sub) {
            if (sub->parsed()) {
                cmd = c;
                chosen = sub;
            }
        }
        app::Settings overrides;
        for (const auto& key : app::config_keys()) {
            if (chosen->count("--" + key.key) > 0) overrides[key.key] = values[key.key];
        }
        std::optional<std::filesystem::path> file;
        if (!config_path.empty()) file = config_path;
        const auto config = app::resolve_config(file, overrides);
        cmd->run(config, std::cout);
        return kOk;
    } catch (const LookaheadError& e) {
        std::cerr << "audit failed in stage '" << e.stage() << "': " << e.what() << '\n';
        return kAudit;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kNumerical;
    } catch (const ParameterError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kOther;
    }
}
