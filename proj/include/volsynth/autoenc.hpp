#pragma once

#include "volsynth/synth.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace volsynth::ae {

/// One-neuron, single-hidden-layer autoencoder:
///   code = sig(w1 . x + b1),  reconstruction = sig(w2 * code + b2).
struct AutoencoderParams {
    Eigen::RowVectorXd w1;  // 1 x D
    double b1 = 0.0;
    Eigen::VectorXd w2;     // D x 1
    Eigen::VectorXd b2;     // D x 1

    static AutoencoderParams zeros(Eigen::Index dims);
    Eigen::Index dims() const noexcept { return w1.size(); }

    /// Flat layout [w1 (D), b1, w2 (D), b2 (D)], length 3D + 1.
    Eigen::VectorXd flatten() const;
    static AutoencoderParams unflatten(const Eigen::VectorXd& flat, Eigen::Index dims);
};

struct AeHyperparams {
    double lambda1 = 0.001;  // ridge weight penalty
    double lambda2 = 0.001;  // sparsity penalty
    double rho = 0.05;       // target mean activation
    int max_epochs = 1000;
    std::uint64_t seed = 0;
    int retry_limit = 10;
    double degeneracy_threshold = 0.2;

    /// Throws ConfigError if a coefficient is out of range.
    void validate() const;
};

/// Loss terms; total = mse + lambda1 * ridge + lambda2 * kl.
struct LossTerms {
    double total = 0.0;
    double mse = 0.0;
    double ridge = 0.0;
    double kl = 0.0;
    double rho_hat = 0.0;
};

struct AeTrainReport {
    double final_loss = 0.0;
    double mse_term = 0.0;
    double ridge_term = 0.0;
    double kl_term = 0.0;
    double rho_hat = 0.0;
    int epochs_run = 0;
    int retries_used = 0;
    bool degenerate = false;
    double level_correlation = 0.0;    // corr(code, per-row mean of normalized inputs)
    std::vector<double> loss_history;  // per accepted epoch, final attempt

    std::string to_json() const;
};

struct Normalized {
    Eigen::MatrixXd values;           // T x D in [0, 1]
    Eigen::VectorXd column_min;
    Eigen::VectorXd column_max;

    Eigen::MatrixXd denormalize(const Eigen::MatrixXd& unit) const;
};

/// Per-column min-max map onto [0, 1]. Throws DegenerateInputError naming a constant column.
Normalized normalize_inputs(const Eigen::MatrixXd& measures);

double sigmoid(double s);
double kl_divergence(double rho, double rho_hat);

struct ForwardResult {
    double code = 0.0;
    Eigen::VectorXd reconstruction;
};
ForwardResult forward(const AutoencoderParams& params, const Eigen::VectorXd& x);

/// Codes for every row of a normalized panel.
Eigen::VectorXd encode(const AutoencoderParams& params, const Eigen::MatrixXd& normalized);

/// rho_hat is clamped to [1e-12, 1 - 1e-12] before the KL term.
LossTerms loss(const AutoencoderParams& params, const Eigen::MatrixXd& normalized, const AeHyperparams& hyper);

/// Analytic gradient of the total loss in the flat parameter layout.
Eigen::VectorXd gradient(const AutoencoderParams& params, const Eigen::MatrixXd& normalized,
                         const AeHyperparams& hyper);

/// Seeded initialization: weights uniform on +-0.5/sqrt(D), biases zero.
AutoencoderParams initial_params(Eigen::Index dims, std::uint64_t seed);

struct TrainResult {
    AutoencoderParams params;
    SyntheticSeries series;  // range-matched to the raw panel's global min/max
    AeTrainReport report;
};

/**
 * Fit the autoencoder on `measures` (raw, variance scale) and return the
 * range-matched code series.
 *
 * Inputs are normalized per column, the regularized loss is minimized with
 * the quasi-Newton optimizer, and the code series is checked against the
 * per-row mean of the normalized inputs. A correlation below the
 * degeneracy threshold triggers a retrain from a fresh seed, up to
 * `retry_limit` times; if every attempt is degenerate the most correlated
 * one is returned with `degenerate = true`.
 *
 * `warm_start`, when given, replaces the random initialization of the
 * first attempt.
 */
TrainResult train(const Eigen::MatrixXd& measures, const AeHyperparams& hyper,
                  const std::optional<AutoencoderParams>& warm_start = std::nullopt);

}  // namespace volsynth::ae
