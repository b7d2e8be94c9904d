#pragma once

#include "volsynth/optim.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace volsynth::vol {

enum class ModelKind { Garch, GarchX, RealGarch };

std::string to_string(ModelKind kind);

/// sigma2_t = omega + alpha * d_{t-1} + beta * sigma2_{t-1}, d = r^2 (GARCH) or x (GARCH-X).
struct GarchParams {
    double omega = 0.0;
    double alpha = 0.0;
    double beta = 0.0;

    bool admissible() const noexcept { return omega > 0.0 && alpha >= 0.0 && beta >= 0.0 && alpha + beta < 1.0; }
    double unconditional_variance() const noexcept { return omega / (1.0 - alpha - beta); }
    Eigen::VectorXd to_vector() const;
    static GarchParams from_vector(const Eigen::VectorXd& v);
};

/// Log-linear Realised GARCH:
///   log sigma2_t = omega + beta log sigma2_{t-1} + gamma log x_{t-1}
///   log x_t      = xi + phi log sigma2_t + tau1 z_t + tau2 (z_t^2 - 1) + eps_t,  eps_t ~ N(0, sigma_eps^2)
struct RealGarchParams {
    double omega = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
    double xi = 0.0;
    double phi = 0.0;
    double tau1 = 0.0;
    double tau2 = 0.0;
    double sigma_eps = 1.0;

    double persistence() const noexcept { return beta + gamma * phi; }
    double drift() const noexcept { return omega + gamma * xi; }
    bool stationary() const noexcept { return persistence() > -1.0 && persistence() < 1.0; }
    Eigen::VectorXd to_vector() const;
    static RealGarchParams from_vector(const Eigen::VectorXd& v);
};

/// pi and mu of the AR(1) form of log sigma2. For GARCH-type models these
/// are alpha + beta and omega.
struct StationarityDiagnostics {
    double persistence = 0.0;
    double drift = 0.0;
};

struct FilterState {
    Eigen::VectorXd sigma2;
    Eigen::VectorXd log_sigma2;
    Eigen::VectorXd z;
    Eigen::VectorXd eps;  // measurement residuals; empty for GARCH-type models
};

/// Conditional variance path. `x` selects GARCH-X when non-empty.
/// sigma2_1 defaults to the sample variance of `returns`.
/// Throws ParameterError for inadmissible parameters and NumericalError
/// (with the first offending index) if the path stops being finite.
FilterState garch_filter(const GarchParams& params, const Eigen::VectorXd& returns, const Eigen::VectorXd& x = {},
                         std::optional<double> initial_sigma2 = std::nullopt);

/// log sigma2_1 defaults to the sample mean of log x.
FilterState realgarch_filter(const RealGarchParams& params, const Eigen::VectorXd& returns, const Eigen::VectorXd& x,
                             std::optional<double> initial_log_sigma2 = std::nullopt);

/// -sum(log sigma2_t + r_t^2 / sigma2_t), constants omitted.
double loglik_returns(const FilterState& state, const Eigen::VectorXd& returns);

/// loglik_returns - sum(log sigma_eps^2 + eps_t^2 / sigma_eps^2).
double loglik_joint(const FilterState& state, const Eigen::VectorXd& returns, const Eigen::VectorXd& x,
                    double sigma_eps);

std::vector<std::string> param_names(ModelKind kind);

struct FitReport {
    ModelKind model = ModelKind::Garch;
    Eigen::VectorXd params;
    double neg_loglik_returns = 0.0;             // -l(r; theta), comparable across models
    std::optional<double> neg_loglik_joint;      // RealGARCH only
    StationarityDiagnostics diagnostics;
    bool converged = false;
    int iterations = 0;
    double max_constraint_violation = 0.0;
    FilterState state;                            // filter at the estimate

    std::string to_json(const std::string& label = {}) const;
};

struct EstimateOptions {
    optim::Tolerances tol{};
    int max_iter = 500;
    std::optional<double> initial_state;  // sigma2_1 (GARCH-type) or log sigma2_1 (RealGARCH)
};

/// Feasible default start for each model.
Eigen::VectorXd default_start(ModelKind kind, const Eigen::VectorXd& returns);

/// Negative mean log-likelihood minimized by `estimate` (returns-only for
/// GARCH-type models, joint for RealGARCH) and its analytic gradient.
/// Non-finite filter paths give +inf.
double objective(ModelKind kind, const Eigen::VectorXd& theta, const Eigen::VectorXd& returns,
                 const Eigen::VectorXd& x, std::optional<double> initial_state, Eigen::VectorXd* grad = nullptr);

/// Constrained maximum likelihood. `x` must be non-empty for GARCH-X and
/// RealGARCH. A `start` that is infeasible or gives a non-finite
/// likelihood is replaced by the default start.
FitReport estimate(ModelKind kind, const Eigen::VectorXd& returns, const Eigen::VectorXd& x = {},
                   const std::optional<Eigen::VectorXd>& start = std::nullopt, const EstimateOptions& options = {});

/// Variance for the day after the last filtered observation.
double forecast_one_step(ModelKind kind, const Eigen::VectorXd& params, const FilterState& state, double last_return,
                         double last_x);

}  // namespace volsynth::vol
