#include "volsynth/experiment.hpp"

#include "volsynth/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <ostream>
#include <set>

namespace volsynth::app {

namespace fs = std::filesystem;
using Eigen::Index;
using Eigen::VectorXd;

namespace {

constexpr const char* kAllModels = "GARCH,GARCH-X,RV-RG,PC-RG,IC-RG,AVG-RG,AE-RG";

std::string trim(std::string s) {
    auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
    s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
    s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
    return s;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string item;
    for (char c : text + ",") {
        if (c == ',') {
            item = trim(item);
            if (!item.empty()) out.push_back(item);
            item.clear();
        } else {
            item += c;
        }
    }
    return out;
}

double parse_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) throw ConfigError(fmt::format("{}: '{}' is not a number", key, text));
    return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
    std::uint64_t v = 0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError(fmt::format("{}: '{}' is not a non-negative integer", key, text));
    }
    return v;
}

bool parse_bool(const std::string& key, std::string text) {
    for (auto& c : text) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, text));
}

std::vector<double> parse_doubles(const std::string& key, const std::string& text) {
    std::vector<double> out;
    for (const auto& item : split_list(text)) out.push_back(parse_double(key, item));
    return out;
}

const KeySpec* find_key(const std::string& key) {
    for (const auto& k : config_keys()) {
        if (k.key == key) return &k;
    }
    return nullptr;
}

std::string file_safe(std::string id) {
    for (auto& c : id) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) c = '_';
    }
    return id;
}

void prepare_out_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError(fmt::format("cannot create output directory '{}': {}", dir.string(), ec.message()));
    const auto probe = dir / ".write_probe";
    {
        std::ofstream out(probe);
        if (!out) throw ConfigError(fmt::format("output directory '{}' is not writable", dir.string()));
    }
    fs::remove(probe, ec);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
    out << text;
    if (!text.empty() && text.back() != '\n') out << '\n';
}

vol::RealGarchParams sim_params(const Settings& s) {
    vol::RealGarchParams p;
    p.omega = parse_double("sim_omega", s.at("sim_omega"));
    p.beta = parse_double("sim_beta", s.at("sim_beta"));
    p.gamma = parse_double("sim_gamma", s.at("sim_gamma"));
    p.xi = parse_double("sim_xi", s.at("sim_xi"));
    p.phi = parse_double("sim_phi", s.at("sim_phi"));
    p.tau1 = parse_double("sim_tau1", s.at("sim_tau1"));
    p.tau2 = parse_double("sim_tau2", s.at("sim_tau2"));
    p.sigma_eps = parse_double("sim_sigma_eps", s.at("sim_sigma_eps"));
    return p;
}

std::pair<MeasurePanel, MeasurePanel> split_panel(const ExperimentConfig& config, const MeasurePanel& panel) {
    const auto& rule = config.split;
    if (rule.size() == 10 && rule[4] == '-' && rule[7] == '-') return split_at_date(panel, rule);
    return split(panel, parse_double("split", rule));
}

}  // namespace

const std::vector<KeySpec>& config_keys() {
    static const std::vector<KeySpec> keys = {
        {"input", "data", "", "panel CSV to read"},
        {"date_column", "data", "date", "date column name"},
        {"close_column", "data", "close", "close price column name"},
        {"measures", "data", "", "comma-separated measure columns (empty: all others)"},
        {"split", "data", "0.8", "in-sample fraction, or first out-of-sample date YYYY-MM-DD"},
        {"sim_length", "simulation", "", "simulate this many days instead of reading input"},
        {"sim_burn_in", "simulation", "500", "discarded burn-in days"},
        {"sim_start_date", "simulation", "2000-01-03", "first simulated date"},
        {"sim_omega", "simulation", "0.1536", "omega"},
        {"sim_beta", "simulation", "0.5982", "beta"},
        {"sim_gamma", "simulation", "0.3566", "gamma"},
        {"sim_xi", "simulation", "-0.4475", "xi"},
        {"sim_phi", "simulation", "1.0487", "phi"},
        {"sim_tau1", "simulation", "-0.101", "tau1"},
        {"sim_tau2", "simulation", "0.1165", "tau2"},
        {"sim_sigma_eps", "simulation", "0.5374", "sigma_eps"},
        {"sim_loadings", "simulation", "1.0,0.9,0.6,0.5,1.1,0.8", "measure loadings"},
        {"sim_noise", "simulation", "0.15,0.2,0.25,0.3,0.35,1.0", "measure noise scales"},
        {"models", "models", kAllModels, "comma-separated model ids"},
        {"method", "models", "", "measure method for RealGARCH: pc, ic, avg, ae or rv"},
        {"rv_column", "models", "", "column used by RV-RG and GARCH-X (empty: first)"},
        {"ica_components", "models", "1", "whitened directions kept before FastICA (0: all)"},
        {"window", "rolling", "", "estimation window length (empty: in-sample length)"},
        {"horizon", "rolling", "", "out-of-sample days (empty: all remaining)"},
        {"refit_interval", "rolling", "1", "re-estimate every N days"},
        {"demean", "rolling", "window", "return de-meaning: window or full"},
        {"ae_warm_start", "rolling", "false", "start each window's autoencoder from the previous one"},
        {"threads", "rolling", "0", "worker threads (0: VOLSYNTH_THREADS or all cores)"},
        {"ae_lambda1", "autoencoder", "0.001", "ridge penalty"},
        {"ae_lambda2", "autoencoder", "0.001", "sparsity penalty"},
        {"ae_rho", "autoencoder", "0.05", "target mean activation"},
        {"ae_max_epochs", "autoencoder", "1000", "training iterations"},
        {"ae_retry_limit", "autoencoder", "10", "retrains of a degenerate encoding"},
        {"ae_degeneracy_threshold", "autoencoder", "0.2", "minimum code/level correlation"},
        {"out", "run", "out", "output directory"},
        {"seed", "run", "0", "base seed"},
        {"audit_pairs", "run", "5", "random (day, perturbation) pairs in the audit"},
    };
    return keys;
}

Settings read_ini(const fs::path& path) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(fmt::format("{}:{}: {}", path.string(), e.line(), e.message()));
    }
    Settings out;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) {
            throw ConfigError(fmt::format("{}: key '{}' must sit inside a section", path.string(), section));
        }
        for (const auto& [key, value] : body) {
            const auto* spec = find_key(key);
            if (!spec) throw ConfigError(fmt::format("{}: unknown key '{}'", path.string(), key));
            if (spec->section != section) {
                throw ConfigError(fmt::format("{}: key '{}' belongs in section [{}], found in [{}]", path.string(),
                                              key, spec->section, section));
            }
            out[key] = trim(value.data());
        }
    }
    return out;
}

ExperimentConfig resolve_config(const std::optional<fs::path>& config_file, const Settings& overrides) {
    Settings s;
    for (const auto& k : config_keys()) s[k.key] = k.default_value;
    std::set<std::string> explicit_keys;
    auto apply = [&](const Settings& layer) {
        for (const auto& [k, v] : layer) {
            if (!find_key(k)) throw ConfigError(fmt::format("unknown key '{}'", k));
            s[k] = v;
            explicit_keys.insert(k);
        }
    };
    if (config_file) apply(read_ini(*config_file));
    apply(overrides);

    ExperimentConfig c;
    if (!s["input"].empty()) c.input = fs::path(s["input"]);
    if (!s["sim_length"].empty()) {
        sim::DgpSpec spec;
        spec.params = sim_params(s);
        spec.loadings = parse_doubles("sim_loadings", s["sim_loadings"]);
        spec.noise_scales = parse_doubles("sim_noise", s["sim_noise"]);
        spec.length = parse_uint("sim_length", s["sim_length"]);
        spec.burn_in = parse_uint("sim_burn_in", s["sim_burn_in"]);
        check_iso_date(s["sim_start_date"]);
        c.simulation = spec;
    }
    if (c.input && c.simulation) throw ConfigError("give either an input file or a simulation length, not both");

    c.columns.date = s["date_column"];
    c.columns.close = s["close_column"];
    c.columns.measures = split_list(s["measures"]);
    c.split = s["split"];
    if (!c.split.empty() && !(c.split.size() == 10 && c.split[4] == '-')) {
        const double f = parse_double("split", c.split);
        if (!(f > 0.0 && f < 1.0)) throw ConfigError(fmt::format("split fraction {} is outside (0, 1)", f));
    } else if (!c.split.empty()) {
        check_iso_date(c.split);
    }

    if (!s["method"].empty()) c.method = method_from_string(s["method"]);
    if (c.method && !explicit_keys.contains("models")) {
        s["models"] = to_string(*c.method) + "-RG";
    }
    for (auto id : split_list(s["models"])) {
        if (id == "RG" || id == "rg") {
            if (!c.method) throw ConfigError("model 'RG' needs a method");
            id = to_string(*c.method) + "-RG";
        }
        c.models.push_back(id);
    }
    if (c.models.empty()) throw ConfigError("no models configured");
    c.rv_column = s["rv_column"];
    c.ica_components = static_cast<int>(parse_uint("ica_components", s["ica_components"]));

    if (!s["window"].empty()) c.window = parse_uint("window", s["window"]);
    if (!s["horizon"].empty()) c.horizon = parse_uint("horizon", s["horizon"]);
    c.refit_interval = parse_uint("refit_interval", s["refit_interval"]);
    if (s["demean"] == "window") {
        c.demean = bt::DemeanScope::Window;
    } else if (s["demean"] == "full") {
        c.demean = bt::DemeanScope::FullSample;
    } else {
        throw ConfigError(fmt::format("demean: expected 'window' or 'full', got '{}'", s["demean"]));
    }
    c.ae_warm_start = parse_bool("ae_warm_start", s["ae_warm_start"]);
    c.threads = static_cast<unsigned>(parse_uint("threads", s["threads"]));

    c.ae.lambda1 = parse_double("ae_lambda1", s["ae_lambda1"]);
    c.ae.lambda2 = parse_double("ae_lambda2", s["ae_lambda2"]);
    c.ae.rho = parse_double("ae_rho", s["ae_rho"]);
    c.ae.max_epochs = static_cast<int>(parse_uint("ae_max_epochs", s["ae_max_epochs"]));
    c.ae.retry_limit = static_cast<int>(parse_uint("ae_retry_limit", s["ae_retry_limit"]));
    c.ae.degeneracy_threshold = parse_double("ae_degeneracy_threshold", s["ae_degeneracy_threshold"]);
    c.ae.validate();

    if (s["out"].empty()) throw ConfigError("out: an output directory is required");
    c.out_dir = s["out"];
    c.seed = parse_uint("seed", s["seed"]);
    if (c.simulation) c.simulation->seed = c.seed;
    c.audit_pairs = parse_uint("audit_pairs", s["audit_pairs"]);
    c.resolved = std::move(s);
    return c;
}

void write_resolved_config(const ExperimentConfig& config, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
    std::string section;
    for (const auto& k : config_keys()) {
        if (k.section != section) {
            if (!section.empty()) out << '\n';
            section = k.section;
            out << '[' << section << "]\n";
        }
        out << k.key << " = " << config.resolved.at(k.key) << '\n';
    }
}

MeasurePanel load_experiment_panel(const ExperimentConfig& config) {
    if (config.input) return load_panel(*config.input, config.columns);
    if (config.simulation) {
        config.simulation->validate();
        return sim::to_panel(sim::simulate(*config.simulation), config.resolved.at("sim_start_date"));
    }
    throw ConfigError("no data: give --input or --sim_length");
}

std::vector<bt::ModelSpec> resolve_models(const ExperimentConfig& config, const MeasurePanel& panel) {
    Index column = 0;
    if (!config.rv_column.empty()) column = bt::parse_model("RV-RG:" + config.rv_column, panel.measure_names).column;
    std::vector<bt::ModelSpec> out;
    for (const auto& id : config.models) out.push_back(bt::parse_model(id, panel.measure_names, column));
    return out;
}

bt::RollingConfig rolling_config(const ExperimentConfig& config, const MeasurePanel& panel) {
    bt::RollingConfig rc;
    rc.models = resolve_models(config, panel);
    if (config.window) {
        rc.window = *config.window;
    } else {
        rc.window = split_panel(config, panel).first.rows();
    }
    if (config.horizon) {
        rc.horizon = *config.horizon;
    } else {
        if (rc.window >= panel.rows()) throw ConfigError("window leaves no out-of-sample days");
        rc.horizon = panel.rows() - rc.window;
    }
    rc.refit_interval = config.refit_interval;
    rc.ae = config.ae;
    rc.ae_warm_start = config.ae_warm_start;
    rc.ica_components = config.ica_components;
    rc.base_seed = config.seed;
    rc.demean = config.demean;
    rc.threads = config.threads;
    return rc;
}

void cmd_summarize(const ExperimentConfig& config, std::ostream& console) {
    const auto panel = load_experiment_panel(config);
    prepare_out_dir(config.out_dir);
    std::vector<std::pair<std::string, SummaryStats>> rows;
    rows.emplace_back("returns", summarize(panel.raw_returns));
    for (std::size_t d = 0; d < panel.dims(); ++d) {
        const VectorXd logs = panel.measures.col(static_cast<Index>(d)).array().log();
        rows.emplace_back("log_" + panel.measure_names[d], summarize(logs));
    }
    write_summary_csv(rows, config.out_dir / "summary.csv");
    write_resolved_config(config, config.out_dir / "resolved_config.ini");

    fmt::print(console, "{} observations, {} to {}\n", panel.rows(), panel.dates.front(), panel.dates.back());
    fmt::print(console, "{:<16}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}\n", "series", "mean", "std", "median",
               "min", "max", "skew", "kurt");
    for (const auto& [name, s] : rows) {
        fmt::print(console, "{:<16}{:>10.4f}{:>10.4f}{:>10.4f}{:>10.4f}{:>10.4f}{:>10.4f}{:>10.4f}\n", name, s.mean,
                   s.std_dev, s.median, s.min, s.max, s.skewness, s.excess_kurtosis);
    }
}

void cmd_fit(const ExperimentConfig& config, std::ostream& console) {
    const auto panel = load_experiment_panel(config);
    const auto models = resolve_models(config, panel);
    const auto in_sample = split_panel(config, panel).first;
    prepare_out_dir(config.out_dir);

    struct Outcome {
        std::string id;
        std::optional<vol::FitReport> fit;
        std::string error;
    };
    std::vector<Outcome> outcomes;
    nlohmann::ordered_json all = nlohmann::ordered_json::array();
    for (const auto& m : models) {
        Outcome o{m.id, std::nullopt, {}};
        try {
            const auto measure = bt::build_measure(in_sample.measures, m, config.seed, config.ae, std::nullopt,
                                                   config.ica_components);
            o.fit = vol::estimate(m.kind, in_sample.returns, measure.x);
            all.push_back(nlohmann::ordered_json::parse(o.fit->to_json(m.id)));
        } catch (const Error& e) {
            o.error = e.what();
            spdlog::error("{}: {}", m.id, e.what());
            all.push_back({{"model", m.id}, {"error", o.error}});
        }
        outcomes.push_back(std::move(o));
    }

    for (const auto& o : outcomes) {
        if (o.fit) write_text(config.out_dir / fmt::format("fit_{}.json", file_safe(o.id)), o.fit->to_json(o.id));
    }
    write_text(config.out_dir / "fits.json", all.dump(2));
    write_resolved_config(config, config.out_dir / "resolved_config.ini");

    fmt::print(console, "in-sample: {} observations, {} to {}\n", in_sample.rows(), in_sample.dates.front(),
               in_sample.dates.back());
    fmt::print(console, "{:<14}", "");
    for (const auto& o : outcomes) fmt::print(console, "{:>12}", o.id);
    fmt::print(console, "\n");
    const std::vector<std::pair<std::string, std::string>> rows = {
        {"omega", "omega"}, {"beta", "beta"},     {"gamma (alpha)", "gamma"},   {"xi", "xi"},
        {"phi", "phi"},     {"tau1", "tau1"},     {"tau2", "tau2"},             {"sigma_eps", "sigma_eps"}};
    for (const auto& [label, name] : rows) {
        fmt::print(console, "{:<14}", label);
        for (const auto& o : outcomes) {
            std::string cell;
            if (o.fit) {
                const auto names = vol::param_names(o.fit->model);
                auto key = name;
                if (o.fit->model != vol::ModelKind::RealGarch && name == "gamma") key = "alpha";
                const auto it = std::find(names.begin(), names.end(), key);
                if (it != names.end()) cell = fmt::format("{:.4f}", o.fit->params(it - names.begin()));
            }
            fmt::print(console, "{:>12}", cell);
        }
        fmt::print(console, "\n");
    }
    fmt::print(console, "{:<14}", "-l(r)");
    for (const auto& o : outcomes) {
        fmt::print(console, "{:>12}", o.fit ? fmt::format("{:.4f}", o.fit->neg_loglik_returns) : "failed");
    }
    fmt::print(console, "\n{:<14}", "persistence");
    for (const auto& o : outcomes) {
        fmt::print(console, "{:>12}", o.fit ? fmt::format("{:.4f}", o.fit->diagnostics.persistence) : "");
    }
    fmt::print(console, "\n");
    for (const auto& o : outcomes) {
        if (!o.error.empty()) fmt::print(console, "{}: {}\n", o.id, o.error);
        if (o.fit && !o.fit->converged) fmt::print(console, "{}: optimizer did not report convergence\n", o.id);
    }
}

void cmd_backtest(const ExperimentConfig& config, std::ostream& console) {
    const auto panel = load_experiment_panel(config);
    const auto rc = rolling_config(config, panel);
    const auto result = bt::run_rolling(panel, rc);
    const auto paths = bt::parameter_paths(result.records);

    prepare_out_dir(config.out_dir);
    bt::write_records_csv(result.records, config.out_dir / "records.csv");
    bt::write_table_csv(result.table, config.out_dir / "comparison.csv");
    write_text(config.out_dir / "comparison.json", result.table.to_json());
    for (const auto& [model, path] : paths) {
        bt::write_parameter_path_csv(path, config.out_dir / fmt::format("params_{}.csv", file_safe(model)));
    }
    write_resolved_config(config, config.out_dir / "resolved_config.ini");

    fmt::print(console, "T_in = {}, T_out = {} ({} to {})\n", rc.window, rc.horizon, panel.dates[rc.window],
               panel.dates[rc.window + rc.horizon - 1]);
    fmt::print(console, "{:<14}{:>16}{:>10}{:>14}{:>12}\n", "model", "-pred loglik", "failures", "nonconverged",
               "degenerate");
    for (const auto& r : result.table.rows) {
        const auto total = fmt::format("{:.4f}", r.total_neg_loglik);
        fmt::print(console, "{:<14}{:>16}{:>10}{:>14}{:>12}\n", r.model, r.best ? "[" + total + "]" : total,
                   r.failures, r.nonconverged, r.degenerate);
    }
    fmt::print(console, "[ ] marks the best model\n");
    if (result.table.protocol_deviation()) {
        fmt::print(console, "note: refit every {} days, not daily\n", rc.refit_interval);
    }
}

void cmd_simulate(const ExperimentConfig& config, std::ostream& console) {
    if (!config.simulation) throw ConfigError("simulate needs --sim_length");
    config.simulation->validate();
    const auto data = sim::simulate(*config.simulation);
    const auto panel = sim::to_panel(data, config.resolved.at("sim_start_date"));
    prepare_out_dir(config.out_dir);
    write_panel(panel, config.out_dir / "panel.csv");
    sim::write_ground_truth(data, panel, config.out_dir / "ground_truth.csv");
    write_resolved_config(config, config.out_dir / "resolved_config.ini");
    fmt::print(console, "simulated {} days with {} measures (seed {})\n", panel.rows(), panel.dims(), config.seed);
}

void cmd_audit(const ExperimentConfig& config, std::ostream& console) {
    const auto panel = load_experiment_panel(config);
    const auto rc = rolling_config(config, panel);
    prepare_out_dir(config.out_dir);
    write_resolved_config(config, config.out_dir / "resolved_config.ini");
    try {
        const auto report = bt::no_lookahead_audit(panel, rc, config.audit_pairs, config.seed);
        write_text(config.out_dir / "audit.json", report.to_json());
        for (const auto& c : report.checks) {
            fmt::print(console, "forecast row {:>5}  perturbed {} of row {:>5}  ok\n", c.forecast_row,
                       c.perturbation, c.perturbed_row);
        }
        fmt::print(console, "audit passed ({} checks)\n", report.checks.size());
    } catch (const LookaheadError& e) {
        nlohmann::ordered_json j;
        j["passed"] = false;
        j["stage"] = e.stage();
        j["message"] = e.what();
        write_text(config.out_dir / "audit.json", j.dump(2));
        throw;
    }
}

}  // namespace volsynth::app
