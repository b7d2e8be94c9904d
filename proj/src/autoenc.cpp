#include "volsynth/autoenc.hpp"

#include "volsynth/error.hpp"
#include "volsynth/optim.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

namespace volsynth::ae {

using Eigen::ArrayXd;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kRhoClamp = 1e-12;
constexpr double kCollapsedSpread = 1e-4;  // std dev of the code series

ArrayXd sigmoid_array(const ArrayXd& s) { return 1.0 / (1.0 + (-s).exp()); }

// Loss and (optionally) gradient in one pass.
LossTerms evaluate(const AutoencoderParams& p, const MatrixXd& x, const AeHyperparams& hyper, VectorXd* grad) {
    const Index T = x.rows();
    const Index D = x.cols();
    const double inv_t = 1.0 / static_cast<double>(T);

    const ArrayXd code = sigmoid_array((x * p.w1.transpose()).array() + p.b1);
    MatrixXd out = code.matrix() * p.w2.transpose();
    out.rowwise() += p.b2.transpose();
    const Eigen::ArrayXXd recon = 1.0 / (1.0 + (-out.array()).exp());
    const Eigen::ArrayXXd err = recon - x.array();

    LossTerms terms;
    terms.mse = err.square().sum() * inv_t;
    terms.ridge = 0.5 * (p.w1.squaredNorm() + p.w2.squaredNorm());
    terms.rho_hat = code.mean();
    const double rho_hat = std::clamp(terms.rho_hat, kRhoClamp, 1.0 - kRhoClamp);
    terms.kl = kl_divergence(hyper.rho, rho_hat);
    terms.total = terms.mse + hyper.lambda1 * terms.ridge + hyper.lambda2 * terms.kl;

    if (grad != nullptr) {
        // d total / d pre-activation of the output layer.
        const MatrixXd delta_out = (2.0 * inv_t * err * recon * (1.0 - recon)).matrix();
        const VectorXd dw2 = delta_out.transpose() * code.matrix() + hyper.lambda1 * p.w2;
        const VectorXd db2 = delta_out.colwise().sum().transpose();
        // The KL term is flat where rho_hat is clamped.
        const double dkl =
            rho_hat == terms.rho_hat ? -hyper.rho / rho_hat + (1.0 - hyper.rho) / (1.0 - rho_hat) : 0.0;
        const ArrayXd dcode = (delta_out * p.w2).array() + hyper.lambda2 * dkl * inv_t;
        const VectorXd delta_hidden = (dcode * code * (1.0 - code)).matrix();
        const VectorXd dw1 = x.transpose() * delta_hidden + hyper.lambda1 * p.w1.transpose();
        const double db1 = delta_hidden.sum();

        grad->resize(3 * D + 1);
        grad->segment(0, D) = dw1;
        (*grad)(D) = db1;
        grad->segment(D + 1, D) = dw2;
        grad->segment(2 * D + 1, D) = db2;
    }
    return terms;
}

std::uint64_t attempt_seed(std::uint64_t base, int attempt) {
    if (attempt == 0) return base;
    std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                      static_cast<std::uint32_t>(attempt)};
    std::uint64_t out = 0;
    std::array<std::uint32_t, 2> words{};
    seq.generate(words.begin(), words.end());
    out = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    return out;
}

// Reflection code -> 1 - code with the decoder adjusted so reconstructions are unchanged.
AutoencoderParams mirrored(const AutoencoderParams& p) {
    AutoencoderParams m = p;
    m.w1 = -p.w1;
    m.b1 = -p.b1;
    m.w2 = -p.w2;
    m.b2 = p.b2 + p.w2;
    return m;
}

}  // namespace

AutoencoderParams AutoencoderParams::zeros(Index dims) {
    AutoencoderParams p;
    p.w1 = Eigen::RowVectorXd::Zero(dims);
    p.w2 = VectorXd::Zero(dims);
    p.b2 = VectorXd::Zero(dims);
    return p;
}

VectorXd AutoencoderParams::flatten() const {
    const Index D = dims();
    VectorXd flat(3 * D + 1);
    flat.segment(0, D) = w1.transpose();
    flat(D) = b1;
    flat.segment(D + 1, D) = w2;
    flat.segment(2 * D + 1, D) = b2;
    return flat;
}

AutoencoderParams AutoencoderParams::unflatten(const VectorXd& flat, Index dims) {
    if (flat.size() != 3 * dims + 1) throw ParameterError("autoencoder parameter vector has the wrong length");
    AutoencoderParams p;
    p.w1 = flat.segment(0, dims).transpose();
    p.b1 = flat(dims);
    p.w2 = flat.segment(dims + 1, dims);
    p.b2 = flat.segment(2 * dims + 1, dims);
    return p;
}

void AeHyperparams::validate() const {
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ConfigError("autoencoder penalties must be non-negative");
    if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("autoencoder target activation rho must lie in (0, 1)");
    if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
    if (retry_limit < 0) throw ConfigError("retry_limit must be non-negative");
}

std::string AeTrainReport::to_json() const {
    nlohmann::ordered_json j;
    j["final_loss"] = final_loss;
    j["mse_term"] = mse_term;
    j["ridge_term"] = ridge_term;
    j["kl_term"] = kl_term;
    j["rho_hat"] = rho_hat;
    j["epochs_run"] = epochs_run;
    j["retries_used"] = retries_used;
    j["degenerate"] = degenerate;
    return j.dump(2);
}

MatrixXd Normalized::denormalize(const MatrixXd& unit) const {
    MatrixXd out(unit.rows(), unit.cols());
    for (Index d = 0; d < unit.cols(); ++d) {
        out.col(d) = (unit.col(d).array() * (column_max(d) - column_min(d)) + column_min(d)).matrix();
    }
    return out;
}

Normalized normalize_inputs(const MatrixXd& measures) {
    Normalized n;
    n.values.resize(measures.rows(), measures.cols());
    n.column_min = measures.colwise().minCoeff().transpose();
    n.column_max = measures.colwise().maxCoeff().transpose();
    for (Index d = 0; d < measures.cols(); ++d) {
        const double span = n.column_max(d) - n.column_min(d);
        if (!(span > 0.0)) throw DegenerateInputError(fmt::format("measure column {} is constant", d));
        n.values.col(d) = ((measures.col(d).array() - n.column_min(d)) / span).matrix();
    }
    return n;
}

double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

double kl_divergence(double rho, double rho_hat) {
    return rho * std::log(rho / rho_hat) + (1.0 - rho) * std::log((1.0 - rho) / (1.0 - rho_hat));
}

ForwardResult forward(const AutoencoderParams& params, const VectorXd& x) {
    ForwardResult r;
    r.code = sigmoid(params.w1.dot(x.transpose()) + params.b1);
    r.reconstruction = sigmoid_array((params.w2 * r.code + params.b2).array()).matrix();
    return r;
}

VectorXd encode(const AutoencoderParams& params, const MatrixXd& normalized) {
    return sigmoid_array((normalized * params.w1.transpose()).array() + params.b1).matrix();
}

LossTerms loss(const AutoencoderParams& params, const MatrixXd& normalized, const AeHyperparams& hyper) {
    if (normalized.rows() < 1) throw DataError("autoencoder loss needs at least one row");
    return evaluate(params, normalized, hyper, nullptr);
}

VectorXd gradient(const AutoencoderParams& params, const MatrixXd& normalized, const AeHyperparams& hyper) {
    if (normalized.rows() < 1) throw DataError("autoencoder gradient needs at least one row");
    VectorXd g;
    evaluate(params, normalized, hyper, &g);
    return g;
}

AutoencoderParams initial_params(Index dims, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double bound = 0.5 / std::sqrt(static_cast<double>(dims));
    std::uniform_real_distribution<double> unif(-bound, bound);
    AutoencoderParams p = AutoencoderParams::zeros(dims);
    for (Index d = 0; d < dims; ++d) p.w1(d) = unif(rng);
    for (Index d = 0; d < dims; ++d) p.w2(d) = unif(rng);
    return p;
}

TrainResult train(const MatrixXd& measures, const AeHyperparams& hyper,
                  const std::optional<AutoencoderParams>& warm_start) {
    hyper.validate();
    const Index T = measures.rows();
    const Index D = measures.cols();
    if (T <= D) throw DataError("autoencoder training needs more rows than measure columns");
    if (warm_start && warm_start->dims() != D) throw ParameterError("warm-start parameters have the wrong dimension");

    const Normalized norm = normalize_inputs(measures);
    const MatrixXd& x = norm.values;
    const VectorXd level = row_mean(x);

    // Objective and gradient share one forward/backward pass per point.
    VectorXd cached_at;
    VectorXd cached_grad;
    optim::OptimProblem problem;
    problem.objective = [&](const VectorXd& flat) {
        VectorXd g;
        const double f = evaluate(AutoencoderParams::unflatten(flat, D), x, hyper, &g).total;
        cached_at = flat;
        cached_grad = std::move(g);
        return f;
    };
    problem.gradient = [&](const VectorXd& flat) -> VectorXd {
        if (cached_at.size() == flat.size() && cached_at == flat) return cached_grad;
        VectorXd g;
        evaluate(AutoencoderParams::unflatten(flat, D), x, hyper, &g);
        return g;
    };

    struct Attempt {
        AutoencoderParams params;
        optim::OptimResult opt;
        double corr = 0.0;
        bool collapsed = false;
        bool usable(double threshold) const { return !collapsed && corr >= threshold; }
        bool better_than(const Attempt& o) const {
            return collapsed != o.collapsed ? !collapsed : corr > o.corr;
        }
    };
    std::optional<Attempt> best;
    int attempt = 0;
    for (; attempt <= hyper.retry_limit; ++attempt) {
        AutoencoderParams start;
        if (attempt == 0 && warm_start) {
            start = *warm_start;
        } else if (attempt == 1 && best) {
            // Fresh seeds from the small symmetric init tend to fall back into the same
            // mirrored basin, so the first retry starts from the reflection of the
            // degenerate solution instead.
            start = mirrored(best->params);
        } else {
            start = initial_params(D, attempt_seed(hyper.seed, attempt));
        }
        problem.x0 = start.flatten();
        cached_at.resize(0);
        Attempt a;
        a.opt = optim::minimize(problem, {}, hyper.max_epochs);
        a.params = AutoencoderParams::unflatten(a.opt.x_star, D);
        const VectorXd code = encode(a.params, x);
        a.corr = pearson(code, level);
        // A near-constant code carries no signal; range matching would only blow up rounding noise.
        a.collapsed = std::sqrt((code.array() - code.mean()).square().mean()) < kCollapsedSpread;
        const bool ok = a.usable(hyper.degeneracy_threshold);
        if (!best || a.better_than(*best)) best = std::move(a);
        if (ok) break;
    }

    TrainResult result;
    result.params = best->params;
    const LossTerms terms = evaluate(result.params, x, hyper, nullptr);
    auto& rep = result.report;
    rep.final_loss = terms.total;
    rep.mse_term = terms.mse;
    rep.ridge_term = terms.ridge;
    rep.kl_term = terms.kl;
    rep.rho_hat = terms.rho_hat;
    rep.epochs_run = best->opt.iterations;
    rep.retries_used = std::min(attempt, hyper.retry_limit);
    rep.level_correlation = best->corr;
    rep.degenerate = !best->usable(hyper.degeneracy_threshold);
    rep.loss_history = best->opt.history;

    result.series.method = Method::AE;
    result.series.values = encode(result.params, x);
    result.series.source_min = measures.minCoeff();
    result.series.source_max = measures.maxCoeff();
    apply_source_range(result.series);
    return result;
}

}  // namespace volsynth::ae
