#pragma once

#include "volsynth/autoenc.hpp"
#include "volsynth/ingest.hpp"
#include "volsynth/synth.hpp"
#include "volsynth/volmodel.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace volsynth::bt {

/// One competing model: a volatility model plus the way its measure is built.
/// Ids: GARCH, GARCH-X, RV-RG, PC-RG, IC-RG, AVG-RG, AE-RG. GARCH-X and RV-RG
/// use a single panel column, which may be named with a ":<column>" suffix
/// (column name or 0-based index), e.g. "RV-RG:m6".
struct ModelSpec {
    std::string id;
    vol::ModelKind kind = vol::ModelKind::RealGarch;
    Method method = Method::AVG;
    Eigen::Index column = 0;
};

ModelSpec parse_model(const std::string& id, const std::vector<std::string>& measure_names,
                      Eigen::Index default_column = 0);

enum class DemeanScope { Window, FullSample };

struct RollingConfig {
    std::size_t window = 1000;   // T_in
    std::size_t horizon = 200;   // T_out; first forecast is for panel row `window`
    std::vector<ModelSpec> models;
    std::size_t refit_interval = 1;
    ae::AeHyperparams ae{};
    bool ae_warm_start = false;
    int ica_components = 1;       // whitened directions kept for IC series; 0 keeps all
    std::uint64_t base_seed = 0;  // window k uses base_seed + k
    DemeanScope demean = DemeanScope::Window;
    unsigned threads = 0;         // 0: VOLSYNTH_THREADS, else hardware concurrency
    vol::EstimateOptions estimate{};

    void validate(std::size_t panel_rows) const;
};

struct MeasureResult {
    Eigen::VectorXd x;  // empty for GARCH
    bool degenerate = false;
    std::optional<ae::AutoencoderParams> ae_params;
};

/// The measure series `model` consumes, built from `measures` alone. PC, IC
/// and AE series are range-matched to the global min/max of `measures`.
MeasureResult build_measure(const Eigen::MatrixXd& measures, const ModelSpec& model, std::uint64_t seed,
                            const ae::AeHyperparams& hyper,
                            const std::optional<ae::AutoencoderParams>& ae_warm = std::nullopt,
                            int ica_components = 1);

/// Everything a model sees for the forecast of panel row `target`: the
/// estimation window is rows [target - window, target).
struct WindowInputs {
    Eigen::VectorXd returns;     // de-meaned window returns
    Eigen::VectorXd x;           // measure series (empty for GARCH)
    double scored_return = 0.0;  // return of row `target`, on the same de-meaning
    bool degenerate = false;     // AE only
    std::optional<ae::AutoencoderParams> ae_params;
};

WindowInputs build_window_inputs(const MeasurePanel& panel, const ModelSpec& model, std::size_t target,
                                 const RollingConfig& config,
                                 const std::optional<ae::AutoencoderParams>& ae_warm = std::nullopt);

struct ForecastRecord {
    std::string date;
    std::string model;
    vol::ModelKind kind = vol::ModelKind::RealGarch;
    std::size_t row = 0;
    double sigma2_hat = 0.0;
    double realized_return = 0.0;
    double contribution = 0.0;  // -(log sigma2_hat + r^2 / sigma2_hat)
    Eigen::VectorXd params;
    bool degenerate = false;
    bool failed = false;     // estimation failed; previous parameters reused
    bool refit = true;
    bool converged = true;
};

/// Predictive contribution of one day.
double predictive_contribution(double sigma2_hat, double realized_return);

struct ComparisonRow {
    std::string model;
    double total_neg_loglik = 0.0;  // -sum(contribution)
    std::size_t failures = 0;
    std::size_t nonconverged = 0;
    std::size_t degenerate = 0;
    bool best = false;
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;
    std::size_t t_in = 0;
    std::size_t t_out = 0;
    std::size_t refit_interval = 1;

    bool protocol_deviation() const noexcept { return refit_interval != 1; }
    const ComparisonRow& row(const std::string& model) const;
    std::string to_json() const;
};

struct RollingResult {
    std::vector<ForecastRecord> records;  // ordered by (date, model)
    ComparisonTable table;
};

/// Fixed-width rolling one-step-ahead forecasts for every configured model.
RollingResult run_rolling(const MeasurePanel& panel, const RollingConfig& config);

ComparisonTable summarize_records(const std::vector<ForecastRecord>& records, const RollingConfig& config);

struct ParameterPath {
    std::vector<std::string> names;
    std::vector<std::string> dates;
    Eigen::MatrixXd values;  // one row per date
};

/// Per-model parameter estimates by date. Throws DataError on empty input.
std::map<std::string, ParameterPath> parameter_paths(const std::vector<ForecastRecord>& records);

void write_records_csv(const std::vector<ForecastRecord>& records, const std::filesystem::path& path);
void write_table_csv(const ComparisonTable& table, const std::filesystem::path& path);
void write_parameter_path_csv(const ParameterPath& path_data, const std::filesystem::path& path);

struct AuditCheck {
    std::size_t forecast_row = 0;
    std::size_t perturbed_row = 0;
    std::string perturbation;  // "return" or "measures"
    bool passed = true;
};

struct AuditReport {
    std::vector<AuditCheck> checks;
    bool passed = true;
    std::string to_json() const;
};

/**
 * Perturb data on or after a forecast day and confirm the forecast for that
 * day is bit-for-bit unchanged, for `pairs` random (day, perturbation)
 * pairs. Throws LookaheadError naming the first stage whose output moved
 * (demean, synthetic, estimate, forecast).
 */
AuditReport no_lookahead_audit(const MeasurePanel& panel, const RollingConfig& config, std::size_t pairs = 5,
                               std::uint64_t seed = 0);

/// Thread count from VOLSYNTH_THREADS, else hardware concurrency (at least 1).
unsigned default_threads();

}  // namespace volsynth::bt
