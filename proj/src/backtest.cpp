#include "volsynth/backtest.hpp"

#include "volsynth/error.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <random>
#include <thread>

namespace volsynth::bt {

using Eigen::Index;
using Eigen::VectorXd;

namespace {

std::string upper(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

Index resolve_column(const std::string& token, const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == token) return static_cast<Index>(i);
    }
    std::size_t idx = 0;
    const auto* end = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(token.data(), end, idx);
    if (ec == std::errc() && ptr == end && idx < names.size()) return static_cast<Index>(idx);
    throw ConfigError(fmt::format("unknown measure column '{}'", token));
}

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

bool same_bits(const VectorXd& a, const VectorXd& b) {
    if (a.size() != b.size()) return false;
    for (Index i = 0; i < a.size(); ++i) {
        if (!same_bits(a(i), b(i))) return false;
    }
    return true;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
    return out;
}

struct WindowReturns {
    VectorXd returns;
    double scored = 0.0;
};

WindowReturns window_returns(const MeasurePanel& panel, std::size_t target, const RollingConfig& config) {
    const auto begin = static_cast<Index>(target - config.window);
    const auto n = static_cast<Index>(config.window);
    WindowReturns out;
    if (config.demean == DemeanScope::FullSample) {
        out.returns = panel.returns.segment(begin, n);
        out.scored = panel.returns(static_cast<Index>(target));
        return out;
    }
    const VectorXd raw = panel.raw_returns.segment(begin, n);
    const double m = raw.mean();
    out.returns = raw.array() - m;
    out.scored = panel.raw_returns(static_cast<Index>(target)) - m;
    return out;
}

void window_measure(const MeasurePanel& panel, const ModelSpec& model, std::size_t target, const RollingConfig& config,
                    const std::optional<ae::AutoencoderParams>& ae_warm, WindowInputs& out) {
    const auto begin = static_cast<Index>(target - config.window);
    const auto n = static_cast<Index>(config.window);
    auto m = build_measure(panel.measures.middleRows(begin, n), model, config.base_seed + (target - config.window),
                           config.ae, config.ae_warm_start ? ae_warm : std::nullopt, config.ica_components);
    out.x = std::move(m.x);
    out.degenerate = m.degenerate;
    out.ae_params = std::move(m.ae_params);
}

struct ComboRun {
    std::vector<ForecastRecord> records;
};

ComboRun run_combo(const MeasurePanel& panel, const ModelSpec& model, const RollingConfig& config) {
    ComboRun run;
    run.records.reserve(config.horizon);
    std::optional<VectorXd> prev_params;
    std::optional<double> prev_sigma2;
    std::optional<ae::AutoencoderParams> ae_warm;

    for (std::size_t k = 0; k < config.horizon; ++k) {
        const std::size_t target = config.window + k;
        ForecastRecord rec;
        rec.date = panel.dates[target];
        rec.model = model.id;
        rec.kind = model.kind;
        rec.row = target;

        WindowInputs in;
        auto wr = window_returns(panel, target, config);
        in.returns = std::move(wr.returns);
        in.scored_return = wr.scored;
        rec.realized_return = in.scored_return;

        bool have_inputs = true;
        try {
            window_measure(panel, model, target, config, ae_warm, in);
            if (in.ae_params) ae_warm = in.ae_params;
        } catch (const Error& e) {
            have_inputs = false;
            spdlog::warn("{} {}: measure construction failed: {}", model.id, rec.date, e.what());
        }
        rec.degenerate = in.degenerate;

        std::optional<double> sigma2;
        if (have_inputs) {
            const bool refit = !prev_params || k % config.refit_interval == 0;
            rec.refit = refit;
            vol::FilterState state;
            VectorXd params;
            bool ok = false;
            if (refit) {
                try {
                    auto fit = vol::estimate(model.kind, in.returns, in.x, prev_params, config.estimate);
                    params = fit.params;
                    state = std::move(fit.state);
                    rec.converged = fit.converged;
                    ok = true;
                } catch (const Error& e) {
                    rec.failed = true;
                    spdlog::warn("{} {}: estimation failed, reusing previous parameters: {}", model.id, rec.date,
                                 e.what());
                }
            }
            if (!ok) {
                params = prev_params ? *prev_params : vol::default_start(model.kind, in.returns);
                try {
                    if (model.kind == vol::ModelKind::RealGarch) {
                        state = vol::realgarch_filter(vol::RealGarchParams::from_vector(params), in.returns, in.x,
                                                      config.estimate.initial_state);
                    } else {
                        state = vol::garch_filter(vol::GarchParams::from_vector(params), in.returns, in.x,
                                                  config.estimate.initial_state);
                    }
                    ok = true;
                } catch (const Error& e) {
                    rec.failed = true;
                    spdlog::warn("{} {}: filter failed: {}", model.id, rec.date, e.what());
                }
            }
            if (ok) {
                const Index last = in.returns.size() - 1;
                const double last_x = in.x.size() > 0 ? in.x(last) : 0.0;
                const double s2 = vol::forecast_one_step(model.kind, params, state, in.returns(last), last_x);
                if (std::isfinite(s2) && s2 > 0.0) {
                    sigma2 = s2;
                    rec.params = params;
                    prev_params = params;
                } else {
                    rec.failed = true;
                }
            }
        } else {
            rec.failed = true;
        }

        if (!sigma2) {
            if (!prev_sigma2) {
                throw NumericalError(
                    fmt::format("{}: no usable forecast for {} and no earlier window to fall back on", model.id,
                                rec.date));
            }
            sigma2 = prev_sigma2;
            rec.params = *prev_params;
        }
        rec.sigma2_hat = *sigma2;
        rec.contribution = predictive_contribution(rec.sigma2_hat, rec.realized_return);
        prev_sigma2 = sigma2;
        run.records.push_back(std::move(rec));
    }
    return run;
}

}  // namespace

ModelSpec parse_model(const std::string& id, const std::vector<std::string>& measure_names,
                      Eigen::Index default_column) {
    const auto colon = id.find(':');
    const std::string base = upper(id.substr(0, colon));
    ModelSpec spec;
    if (base == "GARCH") {
        spec.kind = vol::ModelKind::Garch;
        spec.method = Method::RV;
    } else if (base == "GARCH-X") {
        spec.kind = vol::ModelKind::GarchX;
        spec.method = Method::RV;
    } else if (base.size() > 3 && base.ends_with("-RG")) {
        spec.kind = vol::ModelKind::RealGarch;
        spec.method = method_from_string(base.substr(0, base.size() - 3));
    } else {
        throw ConfigError(fmt::format("unknown model '{}'", id));
    }
    const bool uses_column = spec.kind == vol::ModelKind::GarchX || spec.method == Method::RV;
    if (colon != std::string::npos) {
        if (!uses_column) throw ConfigError(fmt::format("model '{}' does not take a column", id));
        spec.column = resolve_column(id.substr(colon + 1), measure_names);
    } else {
        if (uses_column && (default_column < 0 || static_cast<std::size_t>(default_column) >= measure_names.size())) {
            throw ConfigError(fmt::format("column {} out of range for model '{}'", default_column, id));
        }
        spec.column = default_column;
    }
    spec.id = colon == std::string::npos ? base : base + id.substr(colon);
    return spec;
}

void RollingConfig::validate(std::size_t panel_rows) const {
    if (window < 100) throw ConfigError(fmt::format("window length {} is below 100", window));
    if (horizon < 1) throw ConfigError("out-of-sample length must be positive");
    if (refit_interval < 1) throw ConfigError("refit interval must be at least 1");
    if (models.empty()) throw ConfigError("no models configured");
    if (panel_rows < window + horizon) {
        throw ConfigError(
            fmt::format("panel has {} rows, window + horizon needs {}", panel_rows, window + horizon));
    }
    std::vector<std::string> ids;
    for (const auto& m : models) ids.push_back(m.id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ConfigError("duplicate model id");
    ae.validate();
    if (ica_components < 0) throw ConfigError("ica_components must be non-negative");
}

MeasureResult build_measure(const Eigen::MatrixXd& measures, const ModelSpec& model, std::uint64_t seed,
                            const ae::AeHyperparams& hyper, const std::optional<ae::AutoencoderParams>& ae_warm,
                            int ica_components) {
    MeasureResult out;
    if (model.kind == vol::ModelKind::Garch) return out;
    if (model.column < 0 || model.column >= measures.cols()) {
        throw ConfigError(fmt::format("{}: measure column {} out of range", model.id, model.column));
    }
    if (model.kind == vol::ModelKind::GarchX) {
        out.x = measures.col(model.column);
        return out;
    }
    switch (model.method) {
        case Method::RV:
            out.x = measures.col(model.column);
            break;
        case Method::AVG:
            out.x = avg_measure(measures).values;
            break;
        case Method::PC: {
            auto series = pca_first(measures).first;
            apply_source_range(series);
            out.x = std::move(series.values);
            break;
        }
        case Method::IC: {
            IcaOptions opts;
            opts.seed = seed;
            opts.components = ica_components;
            auto series = ica_first(measures, opts).first;
            apply_source_range(series);
            out.x = std::move(series.values);
            break;
        }
        case Method::AE: {
            auto h = hyper;
            h.seed = seed;
            auto trained = ae::train(measures, h, ae_warm);
            out.x = std::move(trained.series.values);
            out.degenerate = trained.report.degenerate;
            out.ae_params = std::move(trained.params);
            break;
        }
    }
    return out;
}

WindowInputs build_window_inputs(const MeasurePanel& panel, const ModelSpec& model, std::size_t target,
                                 const RollingConfig& config, const std::optional<ae::AutoencoderParams>& ae_warm) {
    if (target < config.window || target >= panel.rows()) {
        throw ConfigError(fmt::format("row {} has no full window of {} rows before it", target, config.window));
    }
    WindowInputs in;
    auto wr = window_returns(panel, target, config);
    in.returns = std::move(wr.returns);
    in.scored_return = wr.scored;
    window_measure(panel, model, target, config, ae_warm, in);
    return in;
}

double predictive_contribution(double sigma2_hat, double realized_return) {
    if (!(sigma2_hat > 0.0) || !std::isfinite(sigma2_hat)) {
        throw NumericalError(fmt::format("predicted variance {} is not positive", sigma2_hat));
    }
    return -(std::log(sigma2_hat) + realized_return * realized_return / sigma2_hat);
}

unsigned default_threads() {
    if (const char* env = std::getenv("VOLSYNTH_THREADS")) {
        unsigned n = 0;
        const auto* end = env + std::char_traits<char>::length(env);
        auto [ptr, ec] = std::from_chars(env, end, n);
        if (ec == std::errc() && ptr == end && n > 0) return n;
        spdlog::warn("ignoring VOLSYNTH_THREADS='{}'", env);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

RollingResult run_rolling(const MeasurePanel& panel, const RollingConfig& config) {
    panel.validate();
    config.validate(panel.rows());

    const std::size_t n = config.models.size();
    std::vector<ComboRun> runs(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                runs[i] = run_combo(panel, config.models[i], config);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const unsigned threads =
        static_cast<unsigned>(std::min<std::size_t>(n, config.threads > 0 ? config.threads : default_threads()));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    RollingResult result;
    for (auto& r : runs) {
        for (auto& rec : r.records) result.records.push_back(std::move(rec));
    }
    std::stable_sort(result.records.begin(), result.records.end(), [](const auto& a, const auto& b) {
        return a.date != b.date ? a.date < b.date : a.model < b.model;
    });
    result.table = summarize_records(result.records, config);
    return result;
}

ComparisonTable summarize_records(const std::vector<ForecastRecord>& records, const RollingConfig& config) {
    ComparisonTable table;
    table.t_in = config.window;
    table.t_out = config.horizon;
    table.refit_interval = config.refit_interval;
    for (const auto& m : config.models) {
        ComparisonRow row;
        row.model = m.id;
        double sum = 0.0;
        for (const auto& rec : records) {
            if (rec.model != m.id) continue;
            sum += rec.contribution;
            row.failures += rec.failed ? 1 : 0;
            row.nonconverged += rec.converged ? 0 : 1;
            row.degenerate += rec.degenerate ? 1 : 0;
        }
        row.total_neg_loglik = -sum;
        table.rows.push_back(row);
    }
    auto best = std::min_element(table.rows.begin(), table.rows.end(), [](const auto& a, const auto& b) {
        return a.total_neg_loglik < b.total_neg_loglik;
    });
    if (best != table.rows.end()) best->best = true;
    return table;
}

const ComparisonRow& ComparisonTable::row(const std::string& model) const {
    for (const auto& r : rows) {
        if (r.model == model) return r;
    }
    throw DataError(fmt::format("no model '{}' in comparison table", model));
}

std::string ComparisonTable::to_json() const {
    nlohmann::ordered_json j;
    j["t_in"] = t_in;
    j["t_out"] = t_out;
    j["refit_interval"] = refit_interval;
    j["protocol_deviation"] = protocol_deviation();
    auto& models = j["models"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        models.push_back({{"model", r.model},
                          {"neg_predictive_loglik", r.total_neg_loglik},
                          {"failures", r.failures},
                          {"nonconverged", r.nonconverged},
                          {"degenerate_windows", r.degenerate},
                          {"best", r.best}});
    }
    return j.dump(2);
}

std::map<std::string, ParameterPath> parameter_paths(const std::vector<ForecastRecord>& records) {
    if (records.empty()) throw DataError("no forecast records to build parameter paths from");
    std::map<std::string, std::vector<const ForecastRecord*>> grouped;
    for (const auto& rec : records) grouped[rec.model].push_back(&rec);
    std::map<std::string, ParameterPath> out;
    for (const auto& [model, recs] : grouped) {
        ParameterPath path;
        path.names = vol::param_names(recs.front()->kind);
        const auto p = static_cast<Index>(path.names.size());
        path.values.resize(static_cast<Index>(recs.size()), p);
        for (std::size_t i = 0; i < recs.size(); ++i) {
            if (recs[i]->params.size() != p) {
                throw DataError(fmt::format("{} {}: parameter vector has {} entries, expected {}", model,
                                            recs[i]->date, recs[i]->params.size(), p));
            }
            path.dates.push_back(recs[i]->date);
            path.values.row(static_cast<Index>(i)) = recs[i]->params.transpose();
        }
        out.emplace(model, std::move(path));
    }
    return out;
}

void write_records_csv(const std::vector<ForecastRecord>& records, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "date,model,sigma2_hat,return,contribution,degenerate\n";
    for (const auto& r : records) {
        out << r.date << ',' << r.model << ',' << format_double(r.sigma2_hat) << ','
            << format_double(r.realized_return) << ',' << format_double(r.contribution) << ','
            << (r.degenerate ? 1 : 0) << '\n';
    }
}

void write_table_csv(const ComparisonTable& table, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "model,neg_predictive_loglik,failures,nonconverged,degenerate_windows,best\n";
    for (const auto& r : table.rows) {
        out << r.model << ',' << format_double(r.total_neg_loglik) << ',' << r.failures << ',' << r.nonconverged
            << ',' << r.degenerate << ',' << (r.best ? 1 : 0) << '\n';
    }
    out << "# t_in=" << table.t_in << " t_out=" << table.t_out << " refit_interval=" << table.refit_interval;
    if (table.protocol_deviation()) out << " (protocol deviation: not refit daily)";
    out << '\n';
}

void write_parameter_path_csv(const ParameterPath& path_data, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "date";
    for (const auto& n : path_data.names) out << ',' << n;
    out << '\n';
    for (std::size_t i = 0; i < path_data.dates.size(); ++i) {
        out << path_data.dates[i];
        for (Index j = 0; j < path_data.values.cols(); ++j) {
            out << ',' << format_double(path_data.values(static_cast<Index>(i), j));
        }
        out << '\n';
    }
}

std::string AuditReport::to_json() const {
    nlohmann::ordered_json j;
    j["passed"] = passed;
    auto& arr = j["checks"] = nlohmann::ordered_json::array();
    for (const auto& c : checks) {
        arr.push_back({{"forecast_row", c.forecast_row},
                       {"perturbed_row", c.perturbed_row},
                       {"perturbation", c.perturbation},
                       {"passed", c.passed}});
    }
    return j.dump(2);
}

namespace {

MeasurePanel perturbed(const MeasurePanel& panel, std::size_t row, bool on_return) {
    MeasurePanel p = panel;
    const auto i = static_cast<Index>(row);
    if (on_return) {
        p.raw_returns(i) += 1.0 + std::abs(p.raw_returns(i));
        p.returns = demean(p.raw_returns);
    } else {
        p.measures.row(i) *= 1.75;
    }
    return p;
}

// First stage whose output differs between the clean and perturbed panels at
// the earliest record that moved.
std::string leaking_stage(const MeasurePanel& clean, const MeasurePanel& dirty, const ModelSpec& model,
                          std::size_t target, const RollingConfig& config, const ForecastRecord& a,
                          const ForecastRecord& b) {
    const auto ra = window_returns(clean, target, config);
    const auto rb = window_returns(dirty, target, config);
    if (!same_bits(ra.returns, rb.returns)) return "demean";
    try {
        const auto ia = build_window_inputs(clean, model, target, config);
        const auto ib = build_window_inputs(dirty, model, target, config);
        if (!same_bits(ia.x, ib.x)) return "synthetic";
    } catch (const Error&) {
        return "synthetic";
    }
    if (!same_bits(a.params, b.params)) return "estimate";
    return "forecast";
}

}  // namespace

AuditReport no_lookahead_audit(const MeasurePanel& panel, const RollingConfig& config, std::size_t pairs,
                               std::uint64_t seed) {
    panel.validate();
    config.validate(panel.rows());
    pairs = std::max<std::size_t>(pairs, 5);

    const std::size_t first = config.window;
    const std::size_t last = config.window + config.horizon - 1;
    std::mt19937_64 rng(seed);
    std::vector<AuditCheck> plan;
    // Fixed checks: last out-of-sample return against the first forecast, and
    // the next day's measure row against a forecast day.
    plan.push_back({first, last, "return", true});
    plan.push_back({first, std::min(first + 1, panel.rows() - 1), "measures", true});
    while (plan.size() < pairs) {
        std::uniform_int_distribution<std::size_t> day(first, last);
        const std::size_t t = day(rng);
        std::uniform_int_distribution<std::size_t> after(t, panel.rows() - 1);
        plan.push_back({t, after(rng), plan.size() % 2 == 0 ? "return" : "measures", true});
    }

    const auto clean = run_rolling(panel, config);
    AuditReport report;
    for (auto check : plan) {
        const auto dirty_panel = perturbed(panel, check.perturbed_row, check.perturbation == "return");
        RollingConfig truncated = config;
        truncated.horizon = check.forecast_row - config.window + 1;
        const auto dirty = run_rolling(dirty_panel, truncated);
        for (const auto& rec : dirty.records) {
            const auto it = std::find_if(clean.records.begin(), clean.records.end(), [&](const auto& c) {
                return c.row == rec.row && c.model == rec.model;
            });
            if (it == clean.records.end()) throw DataError("audit could not align forecast records");
            if (same_bits(it->sigma2_hat, rec.sigma2_hat) && same_bits(it->params, rec.params)) continue;
            const auto model = std::find_if(config.models.begin(), config.models.end(),
                                            [&](const auto& m) { return m.id == rec.model; });
            const auto stage = leaking_stage(panel, dirty_panel, *model, rec.row, config, *it, rec);
            throw LookaheadError(stage, fmt::format("{}: forecast for {} changed after perturbing the {} of row {} "
                                                    "(leaking stage: {})",
                                                    rec.model, rec.date, check.perturbation, check.perturbed_row,
                                                    stage));
        }
        report.checks.push_back(check);
    }
    report.passed = true;
    return report;
}

}  // namespace volsynth::bt
