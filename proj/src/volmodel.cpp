#include "volsynth/volmodel.hpp"

#include "volsynth/error.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <limits>

namespace volsynth::vol {

using Eigen::Index;
using Eigen::VectorXd;

namespace {

constexpr double kStationarityMargin = 1e-6;
constexpr double kInf = std::numeric_limits<double>::infinity();

double sample_variance(const VectorXd& v) {
    if (v.size() < 2) throw DataError("need at least 2 observations for a variance");
    const double m = v.mean();
    return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
}

void check_lengths(const VectorXd& returns, const VectorXd& x) {
    if (x.size() != returns.size()) throw DataError("measure series and returns have different lengths");
}

void check_positive(const VectorXd& x) {
    if (!((x.array() > 0.0).all()) || !x.allFinite()) throw DataError("measure series must be strictly positive");
}

// Returns the first index at which the path is not finite, or -1.
Index run_garch(const GarchParams& p, const VectorXd& r, const VectorXd* x, double s2_init, FilterState& st) {
    const Index T = r.size();
    st.sigma2.resize(T);
    st.log_sigma2.resize(T);
    st.z.resize(T);
    st.eps.resize(0);
    for (Index t = 0; t < T; ++t) {
        double s2 = s2_init;
        if (t > 0) {
            const double d = x != nullptr ? (*x)(t - 1) : r(t - 1) * r(t - 1);
            s2 = p.omega + p.alpha * d + p.beta * st.sigma2(t - 1);
        }
        st.sigma2(t) = s2;
        st.log_sigma2(t) = std::log(s2);
        st.z(t) = r(t) / std::sqrt(s2);
        if (!std::isfinite(st.log_sigma2(t)) || !std::isfinite(st.z(t))) return t;
    }
    return -1;
}

Index run_realgarch(const RealGarchParams& p, const VectorXd& r, const VectorXd& logx, double h_init,
                    FilterState& st) {
    const Index T = r.size();
    st.sigma2.resize(T);
    st.log_sigma2.resize(T);
    st.z.resize(T);
    st.eps.resize(T);
    for (Index t = 0; t < T; ++t) {
        const double h = t == 0 ? h_init : p.omega + p.beta * st.log_sigma2(t - 1) + p.gamma * logx(t - 1);
        const double s2 = std::exp(h);
        const double z = r(t) * std::exp(-0.5 * h);
        st.log_sigma2(t) = h;
        st.sigma2(t) = s2;
        st.z(t) = z;
        st.eps(t) = logx(t) - p.xi - p.phi * h - p.tau1 * z - p.tau2 * (z * z - 1.0);
        if (!std::isfinite(s2) || !(s2 > 0.0) || !std::isfinite(z) || !std::isfinite(st.eps(t))) return t;
    }
    return -1;
}

}  // namespace

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::Garch: return "GARCH";
        case ModelKind::GarchX: return "GARCH-X";
        case ModelKind::RealGarch: return "RealGARCH";
    }
    return "?";
}

VectorXd GarchParams::to_vector() const { return (VectorXd(3) << omega, alpha, beta).finished(); }

GarchParams GarchParams::from_vector(const VectorXd& v) {
    if (v.size() != 3) throw ParameterError("GARCH parameter vector must have 3 entries");
    return {v(0), v(1), v(2)};
}

VectorXd RealGarchParams::to_vector() const {
    return (VectorXd(8) << omega, beta, gamma, xi, phi, tau1, tau2, sigma_eps).finished();
}

RealGarchParams RealGarchParams::from_vector(const VectorXd& v) {
    if (v.size() != 8) throw ParameterError("RealGARCH parameter vector must have 8 entries");
    return {v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7)};
}

std::vector<std::string> param_names(ModelKind kind) {
    if (kind == ModelKind::RealGarch) return {"omega", "beta", "gamma", "xi", "phi", "tau1", "tau2", "sigma_eps"};
    return {"omega", "alpha", "beta"};
}

FilterState garch_filter(const GarchParams& params, const VectorXd& returns, const VectorXd& x,
                         std::optional<double> initial_sigma2) {
    if (!params.admissible()) {
        throw ParameterError(fmt::format("GARCH parameters (omega={}, alpha={}, beta={}) are not admissible",
                                         params.omega, params.alpha, params.beta));
    }
    if (x.size() > 0) {
        check_lengths(returns, x);
        check_positive(x);
    }
    FilterState st;
    const double s2 = initial_sigma2.value_or(sample_variance(returns));
    const Index bad = run_garch(params, returns, x.size() > 0 ? &x : nullptr, s2, st);
    if (bad >= 0) throw NumericalError(fmt::format("GARCH filter became non-finite at index {}", bad));
    return st;
}

FilterState realgarch_filter(const RealGarchParams& params, const VectorXd& returns, const VectorXd& x,
                             std::optional<double> initial_log_sigma2) {
    if (!params.stationary()) {
        throw ParameterError(fmt::format("RealGARCH persistence {} outside (-1, 1)", params.persistence()));
    }
    check_lengths(returns, x);
    check_positive(x);
    const VectorXd logx = x.array().log().matrix();
    FilterState st;
    const double h0 = initial_log_sigma2.value_or(logx.mean());
    const Index bad = run_realgarch(params, returns, logx, h0, st);
    if (bad >= 0) throw NumericalError(fmt::format("RealGARCH filter became non-finite at index {}", bad));
    return st;
}

double loglik_returns(const FilterState& state, const VectorXd& returns) {
    if (state.sigma2.size() != returns.size()) throw DataError("filter state and returns have different lengths");
    return -(state.log_sigma2.array() + returns.array().square() / state.sigma2.array()).sum();
}

double loglik_joint(const FilterState& state, const VectorXd& returns, const VectorXd& x, double sigma_eps) {
    if (!(sigma_eps > 0.0)) throw ParameterError("sigma_eps must be positive");
    if (state.eps.size() != returns.size()) throw DataError("joint likelihood needs RealGARCH residuals");
    check_lengths(returns, x);
    const double s2 = sigma_eps * sigma_eps;
    const double lx = -(std::log(s2) * static_cast<double>(state.eps.size()) + state.eps.squaredNorm() / s2);
    return loglik_returns(state, returns) + lx;
}

VectorXd default_start(ModelKind kind, const VectorXd& returns) {
    if (kind == ModelKind::RealGarch) {
        return (VectorXd(8) << 0.1, 0.6, 0.3, -0.3, 1.0, -0.1, 0.1, 0.5).finished();
    }
    return (VectorXd(3) << 0.05 * sample_variance(returns), 0.05, 0.85).finished();
}

double objective(ModelKind kind, const VectorXd& theta, const VectorXd& r, const VectorXd& x,
                 std::optional<double> initial_state, VectorXd* grad) {
    const Index T = r.size();
    const double inv_t = 1.0 / static_cast<double>(T);
    FilterState st;

    if (kind == ModelKind::RealGarch) {
        const RealGarchParams p = RealGarchParams::from_vector(theta);
        if (!(p.sigma_eps > 0.0)) return kInf;
        const VectorXd logx = x.array().log().matrix();
        const double h0 = initial_state.value_or(logx.mean());
        if (run_realgarch(p, r, logx, h0, st) >= 0) return kInf;
        const double s2e = p.sigma_eps * p.sigma_eps;
        const double nll = ((st.log_sigma2.array() + r.array().square() / st.sigma2.array()).sum() +
                            std::log(s2e) * static_cast<double>(T) + st.eps.squaredNorm() / s2e) *
                           inv_t;
        if (!std::isfinite(nll)) return kInf;
        if (grad != nullptr) {
            // d loglik / d h_t accumulated through the GARCH recursion for (omega, beta, gamma).
            double dh_omega = 0.0;
            double dh_beta = 0.0;
            double dh_gamma = 0.0;
            double g_omega = 0.0, g_beta = 0.0, g_gamma = 0.0;
            double g_xi = 0.0, g_phi = 0.0, g_tau1 = 0.0, g_tau2 = 0.0, g_seps = 0.0;
            for (Index t = 0; t < T; ++t) {
                if (t > 0) {
                    dh_omega = 1.0 + p.beta * dh_omega;
                    dh_beta = st.log_sigma2(t - 1) + p.beta * dh_beta;
                    dh_gamma = logx(t - 1) + p.beta * dh_gamma;
                }
                const double z = st.z(t);
                const double e = st.eps(t);
                const double de = -2.0 * e / s2e;  // d loglik_x / d eps
                const double deps_dh = -p.phi + 0.5 * p.tau1 * z + p.tau2 * z * z;
                const double dl_dh = -1.0 + z * z + de * deps_dh;
                g_omega += dl_dh * dh_omega;
                g_beta += dl_dh * dh_beta;
                g_gamma += dl_dh * dh_gamma;
                g_xi -= de;
                g_phi -= de * st.log_sigma2(t);
                g_tau1 -= de * z;
                g_tau2 -= de * (z * z - 1.0);
                g_seps += -2.0 / p.sigma_eps + 2.0 * e * e / (s2e * p.sigma_eps);
            }
            grad->resize(8);
            *grad << g_omega, g_beta, g_gamma, g_xi, g_phi, g_tau1, g_tau2, g_seps;
            *grad *= -inv_t;
        }
        return nll;
    }

    const GarchParams p = GarchParams::from_vector(theta);
    const VectorXd* xp = kind == ModelKind::GarchX ? &x : nullptr;
    const double s2_init = initial_state.value_or(sample_variance(r));
    if (run_garch(p, r, xp, s2_init, st) >= 0) return kInf;
    if (!((st.sigma2.array() > 0.0).all())) return kInf;
    const double nll = (st.log_sigma2.array() + r.array().square() / st.sigma2.array()).sum() * inv_t;
    if (!std::isfinite(nll)) return kInf;
    if (grad != nullptr) {
        double ds_omega = 0.0, ds_alpha = 0.0, ds_beta = 0.0;
        double g_omega = 0.0, g_alpha = 0.0, g_beta = 0.0;
        for (Index t = 0; t < T; ++t) {
            if (t > 0) {
                const double d = xp != nullptr ? x(t - 1) : r(t - 1) * r(t - 1);
                ds_omega = 1.0 + p.beta * ds_omega;
                ds_alpha = d + p.beta * ds_alpha;
                ds_beta = st.sigma2(t - 1) + p.beta * ds_beta;
            }
            const double s2 = st.sigma2(t);
            const double dl_ds = -(1.0 / s2 - r(t) * r(t) / (s2 * s2));
            g_omega += dl_ds * ds_omega;
            g_alpha += dl_ds * ds_alpha;
            g_beta += dl_ds * ds_beta;
        }
        grad->resize(3);
        *grad << g_omega, g_alpha, g_beta;
        *grad *= -inv_t;
    }
    return nll;
}

namespace {

optim::OptimProblem build_problem(ModelKind kind, const VectorXd& r, const VectorXd& x,
                                  std::optional<double> init) {
    optim::OptimProblem pb;
    pb.objective = [=](const VectorXd& th) { return objective(kind, th, r, x, init); };
    pb.gradient = [=](const VectorXd& th) {
        VectorXd g;
        const double f = objective(kind, th, r, x, init, &g);
        if (!std::isfinite(f)) throw NumericalError("likelihood gradient requested at a non-finite point");
        return g;
    };
    const double inf = std::numeric_limits<double>::infinity();
    if (kind == ModelKind::RealGarch) {
        // 1 - pi >= margin and pi + 1 >= margin, pi = beta + gamma * phi.
        auto pi_grad = [](const VectorXd& th) {
            VectorXd g = VectorXd::Zero(8);
            g(1) = 1.0;
            g(2) = th(4);
            g(4) = th(2);
            return g;
        };
        pb.inequality_constraints.push_back(
            {[](const VectorXd& th) { return 1.0 - (th(1) + th(2) * th(4)) - kStationarityMargin; },
             [pi_grad](const VectorXd& th) { return VectorXd(-pi_grad(th)); }});
        pb.inequality_constraints.push_back(
            {[](const VectorXd& th) { return (th(1) + th(2) * th(4)) + 1.0 - kStationarityMargin; }, pi_grad});
        pb.lower = VectorXd::Constant(8, -inf);
        pb.lower(7) = 1e-6;
    } else {
        pb.inequality_constraints.push_back(
            {[](const VectorXd& th) { return 1.0 - th(1) - th(2) - kStationarityMargin; },
             [](const VectorXd&) { return VectorXd((VectorXd(3) << 0.0, -1.0, -1.0).finished()); }});
        pb.lower = (VectorXd(3) << 1e-8, 0.0, 0.0).finished();
    }
    return pb;
}

bool start_usable(const optim::OptimProblem& pb, const VectorXd& start) {
    if (start.size() != pb.lower.size() || !start.allFinite()) return false;
    for (Index i = 0; i < start.size(); ++i) {
        if (start(i) < pb.lower(i)) return false;
    }
    for (const auto& c : pb.inequality_constraints) {
        if (!(c.value(start) >= 0.0)) return false;
    }
    return std::isfinite(pb.objective(start));
}

}  // namespace

FitReport estimate(ModelKind kind, const VectorXd& returns, const VectorXd& x, const std::optional<VectorXd>& start,
                   const EstimateOptions& options) {
    if (returns.size() < 50) throw DataError("estimation needs at least 50 observations");
    if (!returns.allFinite()) throw DataError("returns contain non-finite values");
    if (kind != ModelKind::Garch) {
        if (x.size() == 0) throw ConfigError(fmt::format("{} needs a measure series", to_string(kind)));
        check_lengths(returns, x);
        check_positive(x);
    }

    optim::OptimProblem pb = build_problem(kind, returns, x, options.initial_state);
    const VectorXd fallback = default_start(kind, returns);
    const bool warm = start && start_usable(pb, *start);
    pb.x0 = warm ? *start : fallback;
    if (!std::isfinite(pb.objective(pb.x0))) {
        throw NumericalError(fmt::format("{} likelihood is not finite at the starting values", to_string(kind)));
    }
    optim::OptimResult res = optim::minimize(pb, options.tol, options.max_iter);
    if (warm && !res.converged) {
        // A warm start far from this sample's optimum can stall; retry from the default.
        pb.x0 = fallback;
        optim::OptimResult cold = optim::minimize(pb, options.tol, options.max_iter);
        if ((cold.converged && cold.f_star <= res.f_star + 1e-9) || cold.f_star < res.f_star) res = std::move(cold);
    }

    FitReport rep;
    rep.model = kind;
    rep.params = res.x_star;
    rep.converged = res.converged;
    rep.iterations = res.iterations;
    rep.max_constraint_violation = res.max_constraint_violation;
    if (kind == ModelKind::RealGarch) {
        const auto p = RealGarchParams::from_vector(res.x_star);
        rep.state = realgarch_filter(p, returns, x, options.initial_state);
        rep.neg_loglik_returns = -loglik_returns(rep.state, returns);
        rep.neg_loglik_joint = -loglik_joint(rep.state, returns, x, p.sigma_eps);
        rep.diagnostics = {p.persistence(), p.drift()};
    } else {
        const auto p = GarchParams::from_vector(res.x_star);
        rep.state = garch_filter(p, returns, kind == ModelKind::GarchX ? x : VectorXd{}, options.initial_state);
        rep.neg_loglik_returns = -loglik_returns(rep.state, returns);
        rep.diagnostics = {p.alpha + p.beta, p.omega};
    }
    return rep;
}

double forecast_one_step(ModelKind kind, const VectorXd& params, const FilterState& state, double last_return,
                         double last_x) {
    const Index T = state.sigma2.size();
    if (T == 0) throw DataError("forecast needs a non-empty filter state");
    if (kind == ModelKind::RealGarch) {
        const auto p = RealGarchParams::from_vector(params);
        return std::exp(p.omega + p.beta * state.log_sigma2(T - 1) + p.gamma * std::log(last_x));
    }
    const auto p = GarchParams::from_vector(params);
    const double d = kind == ModelKind::GarchX ? last_x : last_return * last_return;
    return p.omega + p.alpha * d + p.beta * state.sigma2(T - 1);
}

std::string FitReport::to_json(const std::string& label) const {
    nlohmann::ordered_json j;
    j["model"] = label.empty() ? to_string(model) : label;
    nlohmann::ordered_json params_json;
    const auto names = param_names(model);
    for (std::size_t i = 0; i < names.size(); ++i) params_json[names[i]] = params(static_cast<Index>(i));
    j["params"] = params_json;
    j["neg_loglik_returns"] = neg_loglik_returns;
    if (neg_loglik_joint) {
        j["neg_loglik_joint"] = *neg_loglik_joint;
    } else {
        j["neg_loglik_joint"] = nullptr;
    }
    j["persistence"] = diagnostics.persistence;
    j["drift"] = diagnostics.drift;
    j["converged"] = converged;
    j["iterations"] = iterations;
    return j.dump(2);
}

}  // namespace volsynth::vol
