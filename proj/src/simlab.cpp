#include "volsynth/simlab.hpp"

#include "volsynth/error.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <random>

namespace volsynth::sim {

using Eigen::Index;
using Eigen::VectorXd;

void DgpSpec::validate() const {
    if (!params.stationary()) throw ConfigError("simulation parameters violate -1 < beta + gamma*phi < 1");
    if (params.sigma_eps < 0.0) throw ConfigError("sigma_eps must be non-negative");
    if (loadings.empty()) throw ConfigError("simulation needs at least one measure");
    if (noise_scales.size() != loadings.size()) throw ConfigError("loadings and noise scales differ in length");
    for (double l : loadings) {
        if (!(l > 0.0)) throw ConfigError("measure loadings must be positive");
    }
    for (double s : noise_scales) {
        if (!(s >= 0.0)) throw ConfigError("measure noise scales must be non-negative");
    }
    if (length < 1) throw ConfigError("simulation length must be positive");
}

SimulatedData simulate(const DgpSpec& spec) {
    spec.validate();
    const auto& p = spec.params;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    const Index T = static_cast<Index>(spec.length);
    SimulatedData out;
    out.returns.resize(T);
    out.log_sigma2.resize(T);
    out.canonical.resize(T);

    double h = p.drift() / (1.0 - p.persistence());
    double log_x = p.xi + p.phi * h;
    const auto total = static_cast<Index>(spec.burn_in) + T;
    for (Index step = 0; step < total; ++step) {
        h = p.omega + p.beta * h + p.gamma * log_x;
        const double z = normal(rng);
        const double e = normal(rng);
        log_x = p.xi + p.phi * h + p.tau1 * z + p.tau2 * (z * z - 1.0) + p.sigma_eps * e;
        const Index t = step - static_cast<Index>(spec.burn_in);
        if (t >= 0) {
            out.returns(t) = std::exp(0.5 * h) * z;
            out.log_sigma2(t) = h;
            out.canonical(t) = std::exp(log_x);
        }
    }

    const Index D = static_cast<Index>(spec.dims());
    out.measures.resize(T, D);
    for (Index t = 0; t < T; ++t) {
        for (Index d = 0; d < D; ++d) {
            const double s = spec.noise_scales[static_cast<std::size_t>(d)];
            const double eta = normal(rng);
            out.measures(t, d) =
                spec.loadings[static_cast<std::size_t>(d)] * out.canonical(t) * std::exp(s * eta - 0.5 * s * s);
        }
    }
    return out;
}

VectorXd simulate_garch(const vol::GarchParams& params, std::size_t length, std::uint64_t seed,
                        std::size_t burn_in) {
    if (!params.admissible()) throw ConfigError("GARCH simulation parameters are not admissible");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    VectorXd r(static_cast<Index>(length));
    double s2 = params.unconditional_variance();
    double prev = 0.0;
    const auto total = burn_in + length;
    for (std::size_t step = 0; step < total; ++step) {
        if (step > 0) s2 = params.omega + params.alpha * prev * prev + params.beta * s2;
        prev = std::sqrt(s2) * normal(rng);
        if (step >= burn_in) r(static_cast<Index>(step - burn_in)) = prev;
    }
    return r;
}

MeasurePanel to_panel(const SimulatedData& data, const std::string& start_date) {
    std::vector<std::string> names;
    for (Index d = 0; d < data.measures.cols(); ++d) names.push_back(fmt::format("m{}", d + 1));
    return panel_from_returns(std::span<const double>(data.returns.data(), static_cast<std::size_t>(data.returns.size())),
                              data.measures, std::move(names), start_date);
}

void write_ground_truth(const SimulatedData& data, const MeasurePanel& panel, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
    out << "date,log_sigma2,sigma2,canonical_x\n";
    for (std::size_t t = 0; t < panel.rows(); ++t) {
        const auto i = static_cast<Index>(t);
        out << panel.dates[t] << ',' << format_double(data.log_sigma2(i)) << ','
            << format_double(std::exp(data.log_sigma2(i))) << ',' << format_double(data.canonical(i)) << '\n';
    }
}

DgpSpec common_factor_spec(const vol::RealGarchParams& params, std::size_t length, std::uint64_t seed) {
    DgpSpec spec;
    spec.params = params;
    spec.loadings = {1.0, 0.9, 0.6, 0.5, 1.1, 0.8};
    spec.noise_scales = {0.15, 0.2, 0.25, 0.3, 0.35, 1.0};
    spec.length = length;
    spec.seed = seed;
    return spec;
}

}  // namespace volsynth::sim
