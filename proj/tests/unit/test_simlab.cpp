#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "volsynth/error.hpp"
#include "volsynth/simlab.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace volsynth;
namespace fs = std::filesystem;

namespace {

vol::RealGarchParams params() { return {0.1536, 0.5982, 0.3566, -0.4475, 1.0487, -0.1010, 0.1165, 0.5374}; }

}  // namespace

TEST_CASE("simulation is reproducible for a seed") {
    const auto spec = sim::common_factor_spec(params(), 400, 12);
    const auto a = sim::simulate(spec);
    const auto b = sim::simulate(spec);
    CHECK((a.returns.array() == b.returns.array()).all());
    CHECK((a.measures.array() == b.measures.array()).all());
    auto other = spec;
    other.seed = 13;
    CHECK_FALSE((sim::simulate(other).returns.array() == a.returns.array()).all());
}

TEST_CASE("simulated paths obey the model equations") {
    auto spec = sim::common_factor_spec(params(), 300, 4);
    const auto d = sim::simulate(spec);
    const auto p = spec.params;
    for (int t = 1; t < 300; ++t) {
        const double h = p.omega + p.beta * d.log_sigma2(t - 1) + p.gamma * std::log(d.canonical(t - 1));
        CHECK(d.log_sigma2(t) == doctest::Approx(h).epsilon(1e-12));
    }
    CHECK((d.measures.array() > 0.0).all());
    CHECK(d.measures.cols() == 6);
}

TEST_CASE("noise-free measures are scaled copies of the canonical measure") {
    sim::DgpSpec spec;
    spec.params = params();
    spec.loadings = {1.0, 2.0};
    spec.noise_scales = {0.0, 0.0};
    spec.length = 50;
    const auto d = sim::simulate(spec);
    for (int t = 0; t < 50; ++t) {
        CHECK(d.measures(t, 0) == d.canonical(t));
        CHECK(d.measures(t, 1) == doctest::Approx(2.0 * d.canonical(t)));
    }
}

TEST_CASE("log return variance tracks the simulated variance") {
    const auto spec = sim::common_factor_spec(params(), 20000, 1);
    const auto d = sim::simulate(spec);
    const Eigen::ArrayXd z = d.returns.array() / d.log_sigma2.array().exp().sqrt();
    CHECK(z.mean() == doctest::Approx(0.0).epsilon(0.03));
    CHECK((z.square().mean()) == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("spec validation") {
    auto spec = sim::common_factor_spec(params(), 100, 1);
    spec.params.beta = 0.9;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = sim::common_factor_spec(params(), 100, 1);
    spec.noise_scales.pop_back();
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = sim::common_factor_spec(params(), 100, 1);
    spec.loadings[0] = 0.0;
    CHECK_THROWS_AS(sim::simulate(spec), ConfigError);
    CHECK_THROWS_AS(sim::simulate_garch({0.1, 0.5, 0.6}, 10, 1), ConfigError);
}

TEST_CASE("GARCH simulation") {
    const auto r = sim::simulate_garch({0.05, 0.1, 0.85}, 50000, 2);
    const double var = (r.array() - r.mean()).square().mean();
    CHECK(var == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("panel export round-trips and lines up with the truth file") {
    const auto spec = sim::common_factor_spec(params(), 120, 3);
    const auto d = sim::simulate(spec);
    const auto panel = sim::to_panel(d);
    CHECK(panel.measure_names.front() == "m1");
    CHECK(panel.rows() == 120);

    const auto dir = fs::temp_directory_path() / "volsynth_test_simlab";
    fs::create_directories(dir);
    write_panel(panel, dir / "panel.csv");
    sim::write_ground_truth(d, panel, dir / "truth.csv");
    const auto back = load_panel(dir / "panel.csv");
    CHECK((back.measures.array() == panel.measures.array()).all());
    CHECK((back.raw_returns.array() == panel.raw_returns.array()).all());
    for (int t = 0; t < 120; ++t) CHECK(back.raw_returns(t) == doctest::Approx(d.returns(t)).epsilon(1e-12));

    std::ifstream in(dir / "truth.csv");
    std::string line;
    std::size_t lines = 0;
    std::getline(in, line);
    CHECK(line == "date,log_sigma2,sigma2,canonical_x");
    while (std::getline(in, line)) ++lines;
    CHECK(lines == panel.rows());
}
