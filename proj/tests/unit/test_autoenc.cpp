#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "volsynth/autoenc.hpp"
#include "volsynth/error.hpp"
#include "volsynth/simlab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace volsynth;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double sig(double s) { return 1.0 / (1.0 + std::exp(-s)); }

// Plain-loop loss over a flat parameter vector [w1, b1, w2, b2].
double reference_loss(const std::vector<double>& th, const MatrixXd& x, double l1, double l2, double rho) {
    const auto T = static_cast<std::size_t>(x.rows());
    const auto D = static_cast<std::size_t>(x.cols());
    double mse = 0.0, mean_code = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        double a = th[D];
        for (std::size_t d = 0; d < D; ++d) a += th[d] * x(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(d));
        const double h = sig(a);
        mean_code += h / static_cast<double>(T);
        for (std::size_t d = 0; d < D; ++d) {
            const double y = sig(th[D + 1 + d] * h + th[2 * D + 1 + d]);
            const double e = y - x(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(d));
            mse += e * e;
        }
    }
    mse /= static_cast<double>(T);
    double ridge = 0.0;
    for (std::size_t d = 0; d < D; ++d) ridge += th[d] * th[d] + th[D + 1 + d] * th[D + 1 + d];
    return mse + l1 * 0.5 * ridge + l2 * oracle::bernoulli_kl(rho, mean_code);
}

std::vector<double> to_std(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

MatrixXd rank_one_panel(int T, std::uint64_t seed, VectorXd* factor) {
    std::mt19937_64 rng(seed);
    std::lognormal_distribution<double> ln(0.0, 0.6);
    VectorXd load(5);
    load << 1.0, 0.7, 1.4, 0.5, 1.1;
    MatrixXd x(T, 5);
    factor->resize(T);
    for (int t = 0; t < T; ++t) {
        (*factor)(t) = ln(rng);
        x.row(t) = (*factor)(t) * load.transpose();
    }
    return x;
}

}  // namespace

TEST_CASE("normalization") {
    MatrixXd x(3, 2);
    x << 2.0, 0.0, 4.0, 0.25, 6.0, 1.0;
    const auto n = ae::normalize_inputs(x);
    CHECK(n.values(0, 0) == 0.0);
    CHECK(n.values(1, 0) == 0.5);
    CHECK(n.values(2, 0) == 1.0);
    CHECK(std::abs(n.values(1, 1) - 0.25) < 1e-15);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.1, 20.0);
    MatrixXd r(30, 4);
    for (int i = 0; i < 30; ++i)
        for (int j = 0; j < 4; ++j) r(i, j) = u(rng);
    const auto nr = ae::normalize_inputs(r);
    CHECK((nr.denormalize(nr.values) - r).cwiseAbs().maxCoeff() < 1e-12);

    MatrixXd c = r;
    c.col(2).setConstant(3.0);
    try {
        ae::normalize_inputs(c);
        FAIL("expected DegenerateInputError");
    } catch (const DegenerateInputError& e) {
        CHECK(std::string(e.what()).find("2") != std::string::npos);
    }
}

TEST_CASE("forward pass") {
    auto p = ae::AutoencoderParams::zeros(3);
    VectorXd x(3);
    x << 0.2, 0.9, 0.4;
    auto f = ae::forward(p, x);
    CHECK(f.code == 0.5);
    CHECK((f.reconstruction.array() == 0.5).all());

    p.b1 = 40.0;
    CHECK(std::abs(ae::forward(p, x).code - 1.0) < 1e-12);

    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    ae::AutoencoderParams q = ae::AutoencoderParams::zeros(3);
    for (int d = 0; d < 3; ++d) {
        q.w1(d) = n(rng);
        q.w2(d) = n(rng);
        q.b2(d) = n(rng);
    }
    q.b1 = n(rng);
    const auto g = ae::forward(q, x);
    double a = q.b1;
    for (int d = 0; d < 3; ++d) a += q.w1(d) * x(d);
    CHECK(std::abs(g.code - sig(a)) <= 1e-15);
    for (int d = 0; d < 3; ++d) CHECK(std::abs(g.reconstruction(d) - sig(q.w2(d) * sig(a) + q.b2(d))) <= 1e-15);
}

TEST_CASE("loss terms") {
    CHECK(std::abs(ae::kl_divergence(0.05, 0.5) - 0.494632) < 1e-6);
    CHECK(ae::kl_divergence(0.3, 0.3) == doctest::Approx(0.0));
    CHECK(ae::kl_divergence(0.3, 0.6) > 0.0);

    ae::AutoencoderParams p = ae::AutoencoderParams::zeros(2);
    p.w1 << 1.0, 2.0;
    p.w2 << 2.0, 1.0;
    MatrixXd x(4, 2);
    x << 0.1, 0.2, 0.5, 0.5, 0.9, 0.3, 0.0, 1.0;
    ae::AeHyperparams h;
    const auto t = ae::loss(p, x, h);
    CHECK(t.ridge == doctest::Approx(5.0));
    CHECK(std::abs(t.total - (t.mse + h.lambda1 * t.ridge + h.lambda2 * t.kl)) < 1e-10);
    CHECK(t.total == doctest::Approx(reference_loss(to_std(p.flatten()), x, h.lambda1, h.lambda2, h.rho)).epsilon(1e-13));
    CHECK(t.rho_hat > 0.0);
    CHECK(t.rho_hat < 1.0);
}

TEST_CASE("zero loss at a perfect symmetric point") {
    // D=1, data 0.5, zero params: reconstruction 0.5, code 0.5 = rho.
    ae::AeHyperparams h;
    h.rho = 0.5;
    const MatrixXd x = MatrixXd::Constant(4, 1, 0.5);
    const auto p = ae::AutoencoderParams::zeros(1);
    const auto t = ae::loss(p, x, h);
    CHECK(t.total == 0.0);
    const auto g = ae::gradient(p, x, h);
    CHECK(g.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("saturated code keeps the loss finite") {
    ae::AutoencoderParams p = ae::AutoencoderParams::zeros(2);
    p.b1 = -800.0;
    MatrixXd x(3, 2);
    x << 0.1, 0.2, 0.5, 0.5, 0.9, 0.3;
    const auto t = ae::loss(p, x, {});
    CHECK(std::isfinite(t.total));
    CHECK(std::isfinite(t.kl));
}

TEST_CASE("analytic gradient matches finite differences") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 10; ++rep) {
        const int T = 7, D = 3;
        MatrixXd x(T, D);
        for (int i = 0; i < T; ++i)
            for (int j = 0; j < D; ++j) x(i, j) = u(rng);
        VectorXd th(3 * D + 1);
        for (int i = 0; i < th.size(); ++i) th(i) = n(rng);
        ae::AeHyperparams h;
        h.lambda1 = 0.01;
        h.lambda2 = 0.1;
        h.rho = 0.2;
        const auto g = ae::gradient(ae::AutoencoderParams::unflatten(th, D), x, h);
        const auto f = [&](const std::vector<double>& v) { return reference_loss(v, x, h.lambda1, h.lambda2, h.rho); };
        VectorXd fd(th.size());
        for (int i = 0; i < th.size(); ++i) fd(i) = oracle::central_diff(f, to_std(th), static_cast<std::size_t>(i), 1e-6);
        CHECK((g - fd).norm() / std::max(g.norm(), fd.norm()) < 1e-6);
    }
}

TEST_CASE("ridge gradient is linear in lambda1") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    MatrixXd x(6, 2);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 2; ++j) x(i, j) = u(rng);
    ae::AutoencoderParams p = ae::AutoencoderParams::zeros(2);
    p.w1 << 0.3, -0.7;
    p.w2 << 1.1, 0.4;
    ae::AeHyperparams a, b, z;
    a.lambda1 = 0.01;
    b.lambda1 = 0.02;
    z.lambda1 = 0.0;
    const VectorXd ga = ae::gradient(p, x, a) - ae::gradient(p, x, z);
    const VectorXd gb = ae::gradient(p, x, b) - ae::gradient(p, x, z);
    CHECK((gb - 2.0 * ga).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("flatten and unflatten") {
    ae::AutoencoderParams p = ae::AutoencoderParams::zeros(2);
    p.w1 << 1.0, 2.0;
    p.b1 = 3.0;
    p.w2 << 4.0, 5.0;
    p.b2 << 6.0, 7.0;
    const auto flat = p.flatten();
    REQUIRE(flat.size() == 7);
    for (int i = 0; i < 7; ++i) CHECK(flat(i) == i + 1.0);
    const auto q = ae::AutoencoderParams::unflatten(flat, 2);
    CHECK(q.b2(1) == 7.0);
    CHECK_THROWS_AS(ae::AutoencoderParams::unflatten(flat, 3), ParameterError);
}

TEST_CASE("hyperparameter validation") {
    ae::AeHyperparams h;
    CHECK_NOTHROW(h.validate());
    h.rho = 1.0;
    CHECK_THROWS_AS(h.validate(), ConfigError);
    h = {};
    h.lambda1 = -1.0;
    CHECK_THROWS_AS(h.validate(), ConfigError);
}

TEST_CASE("training recovers a single factor") {
    VectorXd factor;
    const auto x = rank_one_panel(300, 4, &factor);
    ae::AeHyperparams h;
    h.seed = 9;
    const auto r = ae::train(x, h);
    CHECK_FALSE(r.report.degenerate);
    // The code is a sigmoid of the factor, so it is monotone in it but not linear.
    CHECK(pearson(r.series.values, factor) > 0.97);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(factor.size()));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return factor(a) < factor(b); });
    for (std::size_t i = 1; i < order.size(); ++i) CHECK(r.series.values(order[i]) >= r.series.values(order[i - 1]));
    CHECK(r.series.values.minCoeff() == x.minCoeff());
    CHECK(r.series.values.maxCoeff() == x.maxCoeff());
    CHECK(std::abs(r.report.final_loss -
                   (r.report.mse_term + h.lambda1 * r.report.ridge_term + h.lambda2 * r.report.kl_term)) < 1e-10);
    for (std::size_t i = 1; i < r.report.loss_history.size(); ++i) {
        CHECK(r.report.loss_history[i] <= r.report.loss_history[i - 1]);
    }
    const auto again = ae::train(x, h);
    CHECK((again.series.values.array() == r.series.values.array()).all());
}

TEST_CASE("strong sparsity pressure pulls the mean activation to rho") {
    VectorXd factor;
    const auto x = rank_one_panel(200, 8, &factor);
    ae::AeHyperparams h;
    h.lambda2 = 10.0;
    h.rho = 0.05;
    const auto r = ae::train(x, h);
    CHECK(std::abs(r.report.rho_hat - 0.05) < 0.02);
}

TEST_CASE("a negative-weight start is retried") {
    VectorXd factor;
    const auto x = rank_one_panel(300, 6, &factor);
    ae::AutoencoderParams bad = ae::AutoencoderParams::zeros(5);
    bad.w1.setConstant(-3.0);
    bad.b1 = 1.0;
    bad.w2.setConstant(-3.0);
    bad.b2.setConstant(1.0);
    ae::AeHyperparams h;
    h.seed = 1;
    const auto r = ae::train(x, h, bad);
    CHECK(r.report.retries_used >= 1);
    CHECK_FALSE(r.report.degenerate);
    CHECK(pearson(r.series.values, factor) > 0.97);

    ae::AeHyperparams none = h;
    none.retry_limit = 0;
    const auto stuck = ae::train(x, none, bad);
    CHECK(stuck.report.degenerate);
    CHECK(stuck.report.retries_used == 0);
}

TEST_CASE("a collapsed code is reported as degenerate") {
    // On this heavy-tailed panel the loss is minimized by a near-constant code.
    const vol::RealGarchParams p{0.1536, 0.5982, 0.3566, -0.4475, 1.0487, -0.1010, 0.1165, 0.5374};
    const auto d = sim::simulate(sim::common_factor_spec(p, 1000, 10001));
    ae::AeHyperparams h;
    h.retry_limit = 2;
    const auto r = ae::train(d.measures, h);
    const auto n = ae::normalize_inputs(d.measures);
    const VectorXd code = ae::encode(r.params, n.values);
    CHECK(std::sqrt((code.array() - code.mean()).square().mean()) < 1e-4);
    CHECK(r.report.degenerate);
    CHECK(r.report.retries_used == 2);
}
