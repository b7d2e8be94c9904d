#pragma once

#include "volsynth/ingest.hpp"
#include "volsynth/volmodel.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace volsynth::sim {

/// Realised GARCH data-generating process with a D-column measure layer.
/// Column d is loading_d * x_t * exp(noise_d * eta - noise_d^2 / 2), where x_t
/// is the canonical measure from the measurement equation.
struct DgpSpec {
    vol::RealGarchParams params;
    std::vector<double> loadings;      // D entries, > 0
    std::vector<double> noise_scales;  // D entries, >= 0
    std::size_t length = 1000;
    std::uint64_t seed = 0;
    std::size_t burn_in = 500;

    std::size_t dims() const noexcept { return loadings.size(); }
    /// Throws ConfigError on an invalid spec.
    void validate() const;
};

struct SimulatedData {
    Eigen::VectorXd returns;       // raw percentage returns
    Eigen::VectorXd log_sigma2;    // true latent log variance
    Eigen::VectorXd canonical;     // x_t from the measurement equation
    Eigen::MatrixXd measures;      // T x D observed panel
};

SimulatedData simulate(const DgpSpec& spec);

/// GARCH(1,1) returns with Gaussian innovations; sigma2 starts at the
/// unconditional variance and `burn_in` steps are discarded.
Eigen::VectorXd simulate_garch(const vol::GarchParams& params, std::size_t length, std::uint64_t seed,
                               std::size_t burn_in = 500);

/// Panel with business-day dates and measure columns named m1..mD.
MeasurePanel to_panel(const SimulatedData& data, const std::string& start_date = "2000-01-03");

/// date,log_sigma2,sigma2,canonical_x aligned with the panel rows.
void write_ground_truth(const SimulatedData& data, const MeasurePanel& panel, const std::filesystem::path& path);

/// A six-measure common-factor spec around the supplied RealGARCH parameters.
DgpSpec common_factor_spec(const vol::RealGarchParams& params, std::size_t length, std::uint64_t seed);

}  // namespace volsynth::sim
