#include "volsynth/synth.hpp"

#include "volsynth/error.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cctype>
#include <cmath>
#include <random>

namespace volsynth {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string to_string(Method m) {
    switch (m) {
        case Method::PC: return "PC";
        case Method::IC: return "IC";
        case Method::AVG: return "AVG";
        case Method::AE: return "AE";
        case Method::RV: return "RV";
    }
    return "?";
}

Method method_from_string(const std::string& name) {
    std::string upper;
    for (char c : name) upper.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    if (upper == "PC") return Method::PC;
    if (upper == "IC") return Method::IC;
    if (upper == "AVG") return Method::AVG;
    if (upper == "AE") return Method::AE;
    if (upper == "RV") return Method::RV;
    throw ConfigError(fmt::format("unknown synthesis method '{}'", name));
}

VectorXd row_mean(const MatrixXd& m) { return m.rowwise().mean(); }

double pearson(const VectorXd& a, const VectorXd& b) {
    const VectorXd ca = (a.array() - a.mean()).matrix();
    const VectorXd cb = (b.array() - b.mean()).matrix();
    const double denom = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
    if (!(denom > 0.0)) return 0.0;
    return ca.dot(cb) / denom;
}

namespace {

void check_panel(const MatrixXd& x) {
    if (x.cols() < 1) throw DataError("panel has no measure columns");
    if (x.rows() < 2) throw DataError("need at least 2 rows");
    if (!x.allFinite()) throw DataError("panel contains non-finite entries");
}

MatrixXd sample_covariance(const MatrixXd& x, Eigen::RowVectorXd& mean) {
    mean = x.colwise().mean();
    const MatrixXd centered = x.rowwise() - mean;
    return centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

}  // namespace

std::pair<SyntheticSeries, PcaDecomposition> pca_first(const MatrixXd& measures) {
    check_panel(measures);
    if (measures.rows() <= measures.cols()) throw DataError("PCA needs more rows than measure columns");
    Eigen::RowVectorXd mean;
    const MatrixXd cov = sample_covariance(measures, mean);
    const Eigen::SelfAdjointEigenSolver<MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw NumericalError("covariance eigen decomposition failed");

    // Eigen returns ascending order.
    PcaDecomposition dec;
    dec.eigenvalues = solver.eigenvalues().reverse();
    dec.eigenvectors = solver.eigenvectors().rowwise().reverse();

    SyntheticSeries out;
    out.method = Method::PC;
    out.source_min = measures.minCoeff();
    out.source_max = measures.maxCoeff();
    out.values = measures * dec.eigenvectors.col(0);
    if (pearson(out.values, row_mean(measures)) < 0.0) {
        dec.eigenvectors.col(0) *= -1.0;
        out.values = measures * dec.eigenvectors.col(0);
        out.orientation_flipped = true;
    }
    return {std::move(out), std::move(dec)};
}

std::pair<SyntheticSeries, IcaDecomposition> ica_first(const MatrixXd& measures, const IcaOptions& options) {
    check_panel(measures);
    const Index T = measures.rows();
    const Index D = measures.cols();
    if (T <= D) throw DataError("ICA needs more rows than measure columns");

    IcaDecomposition dec;
    const MatrixXd cov = sample_covariance(measures, dec.mean);
    for (Index d = 0; d < D; ++d) {
        if (!(cov(d, d) > 0.0)) throw DataError(fmt::format("measure column {} has zero variance", d));
    }
    const Eigen::SelfAdjointEigenSolver<MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw NumericalError("covariance eigen decomposition failed");
    if (options.components < 0) throw ConfigError("ICA component count must be non-negative");
    const Index K = options.components == 0 ? D : std::min<Index>(options.components, D);
    // Eigenvalues come out ascending; keep the K largest.
    const VectorXd lambda = solver.eigenvalues().tail(K);
    if (lambda.minCoeff() <= 1e-12 * std::max(1.0, solver.eigenvalues().maxCoeff())) {
        throw DataError("measure covariance is rank deficient; cannot whiten");
    }
    // Z = Xc * whiten has identity sample covariance.
    const MatrixXd whiten = solver.eigenvectors().rightCols(K) * lambda.cwiseInverse().cwiseSqrt().asDiagonal();
    const MatrixXd centered = measures.rowwise() - dec.mean;
    const MatrixXd z = centered * whiten;

    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    MatrixXd w_rows = MatrixXd::Zero(K, K);
    const double inv_t = 1.0 / static_cast<double>(T);
    for (Index p = 0; p < K; ++p) {
        VectorXd w(K);
        for (Index i = 0; i < K; ++i) w(i) = normal(rng);
        auto deflate = [&](VectorXd& v) {
            for (Index q = 0; q < p; ++q) v -= v.dot(w_rows.row(q).transpose()) * w_rows.row(q).transpose();
            v.normalize();
        };
        deflate(w);
        bool done = false;
        for (int it = 0; it < options.max_iter; ++it) {
            const VectorXd u = z * w;
            const Eigen::ArrayXd g = u.array().tanh();
            const double mean_dg = (1.0 - g.square()).mean();
            VectorXd w_new = z.transpose() * g.matrix() * inv_t - mean_dg * w;
            deflate(w_new);
            const double lim = std::abs(std::abs(w_new.dot(w)) - 1.0);
            w = w_new;
            if (lim < options.tol) {
                done = true;
                break;
            }
        }
        if (!done) {
            dec.converged = false;
            spdlog::warn("FastICA component {} did not converge in {} iterations", p, options.max_iter);
        }
        w_rows.row(p) = w.transpose();
    }
    dec.unmixing = whiten * w_rows.transpose();

    const MatrixXd components = centered * dec.unmixing;
    const VectorXd level = row_mean(measures);
    Index best = 0;
    double best_corr = 0.0;
    double best_abs = -1.0;
    for (Index j = 0; j < K; ++j) {
        const double c = pearson(components.col(j), level);
        if (std::abs(c) > best_abs) {
            best_abs = std::abs(c);
            best_corr = c;
            best = j;
        }
    }
    SyntheticSeries out;
    out.method = Method::IC;
    out.source_min = measures.minCoeff();
    out.source_max = measures.maxCoeff();
    out.values = components.col(best);
    if (best_corr < 0.0) {
        out.values = -out.values;
        dec.unmixing.col(best) *= -1.0;
        out.orientation_flipped = true;
    }
    dec.chosen_component = static_cast<int>(best);
    return {std::move(out), std::move(dec)};
}

SyntheticSeries avg_measure(const MatrixXd& measures) {
    if (measures.cols() < 1) throw DataError("panel has no measure columns");
    SyntheticSeries out;
    out.method = Method::AVG;
    out.source_min = measures.minCoeff();
    out.source_max = measures.maxCoeff();
    out.values = row_mean(measures);
    return out;
}

VectorXd range_match(const VectorXd& series, double target_min, double target_max) {
    if (series.size() == 0) throw DegenerateInputError("cannot rescale an empty series");
    if (!(target_max > target_min)) throw DegenerateInputError("target range is empty");
    const double lo = series.minCoeff();
    const double hi = series.maxCoeff();
    if (!(hi > lo)) throw DegenerateInputError("cannot rescale a constant series");
    const double span = hi - lo;
    VectorXd out(series.size());
    // std::lerp is exact at both ends and monotone in the weight.
    for (Index i = 0; i < series.size(); ++i) {
        out(i) = std::lerp(target_min, target_max, (series(i) - lo) / span);
    }
    return out;
}

void apply_source_range(SyntheticSeries& series) {
    series.values = range_match(series.values, series.source_min, series.source_max);
}

}  // namespace volsynth
