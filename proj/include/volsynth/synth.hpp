#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <utility>

namespace volsynth {

/// How a single measure series is obtained from the panel. `RV` selects one
/// raw panel column and is included so every model input goes through the
/// same path.
enum class Method { PC, IC, AVG, AE, RV };

std::string to_string(Method m);
Method method_from_string(const std::string& name);

/// A length-T series produced by one reduction method.
struct SyntheticSeries {
    Eigen::VectorXd values;
    Method method = Method::AVG;
    bool orientation_flipped = false;
    double source_min = 0.0;  // global min over all T*D panel entries
    double source_max = 0.0;
};

/// Eigenvectors in columns, ordered by descending eigenvalue.
struct PcaDecomposition {
    Eigen::MatrixXd eigenvectors;
    Eigen::VectorXd eigenvalues;
};

/// Components are (X - mean) * unmixing; they are uncorrelated with unit variance.
struct IcaDecomposition {
    Eigen::MatrixXd unmixing;
    Eigen::RowVectorXd mean;
    bool whitening_applied = true;
    int chosen_component = 0;
    bool converged = true;
};

struct IcaOptions {
    std::uint64_t seed = 0;
    int max_iter = 400;
    double tol = 1e-6;
    int components = 1;  // leading whitened directions kept before unmixing; 0 keeps all D
};

/// First principal component scores X * u1 on the raw (uncentered) panel,
/// with u1 from the sample covariance and oriented so the scores correlate
/// non-negatively with the per-row mean. Values are not rescaled.
std::pair<SyntheticSeries, PcaDecomposition> pca_first(const Eigen::MatrixXd& measures);

/// FastICA (deflation, log-cosh contrast) on the whitened panel. Whitening
/// keeps the `options.components` leading eigen-directions of the sample
/// covariance. Of the recovered components, the one with the largest absolute
/// correlation to the per-row mean is returned, oriented positively. Values
/// are the standardized component, not rescaled.
std::pair<SyntheticSeries, IcaDecomposition> ica_first(const Eigen::MatrixXd& measures, const IcaOptions& options = {});

/// Per-row mean of the panel. Already inside the panel range; no rescale.
SyntheticSeries avg_measure(const Eigen::MatrixXd& measures);

/// Affine min-max map of `series` onto [target_min, target_max]. The series
/// minimum and maximum land exactly on the targets and order is preserved.
Eigen::VectorXd range_match(const Eigen::VectorXd& series, double target_min, double target_max);

/// Rescale a PC/IC/AE series onto its recorded source range, in place.
void apply_source_range(SyntheticSeries& series);

Eigen::VectorXd row_mean(const Eigen::MatrixXd& m);

/// Pearson correlation; 0 when either series has zero variance.
double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace volsynth
