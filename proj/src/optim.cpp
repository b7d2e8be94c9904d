#include "volsynth/optim.hpp"

#include "volsynth/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace volsynth::optim {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct QpSolution {
    VectorXd d;
    VectorXd lambda;  // one multiplier per row of A, zero when inactive
    bool ok = true;
};

// Primal active-set method for  min 0.5 d'Bd + g'd  s.t.  A d >= b,
// with B symmetric positive definite and d = 0 feasible (b <= 0).
QpSolution solve_qp(const MatrixXd& B, const VectorXd& g, const MatrixXd& A, const VectorXd& b) {
    const auto n = g.size();
    const auto m = A.rows();
    QpSolution sol;
    sol.d = VectorXd::Zero(n);
    sol.lambda = VectorXd::Zero(m);
    std::vector<Eigen::Index> working;
    const Eigen::LDLT<MatrixXd> b_ldlt(B);

    const int max_iter = 10 * static_cast<int>(n + m) + 50;
    for (int it = 0; it < max_iter; ++it) {
        const VectorXd c = g + B * sol.d;
        VectorXd p;
        VectorXd lam;
        if (working.empty()) {
            p = -b_ldlt.solve(c);
        } else {
            const auto w = static_cast<Eigen::Index>(working.size());
            MatrixXd kkt = MatrixXd::Zero(n + w, n + w);
            VectorXd rhs = VectorXd::Zero(n + w);
            kkt.topLeftCorner(n, n) = B;
            for (Eigen::Index k = 0; k < w; ++k) {
                kkt.block(0, n + k, n, 1) = -A.row(working[static_cast<std::size_t>(k)]).transpose();
                kkt.block(n + k, 0, 1, n) = A.row(working[static_cast<std::size_t>(k)]);
            }
            rhs.head(n) = -c;
            const VectorXd z = kkt.colPivHouseholderQr().solve(rhs);
            p = z.head(n);
            lam = z.tail(w);
        }

        if (p.lpNorm<Eigen::Infinity>() <= 1e-13 * (1.0 + sol.d.lpNorm<Eigen::Infinity>())) {
            if (working.empty()) return sol;
            Eigen::Index worst = 0;
            const double min_lam = lam.minCoeff(&worst);
            if (min_lam >= -1e-12) {
                for (std::size_t k = 0; k < working.size(); ++k) {
                    sol.lambda(working[k]) = lam(static_cast<Eigen::Index>(k));
                }
                return sol;
            }
            working.erase(working.begin() + worst);
            continue;
        }

        double alpha = 1.0;
        Eigen::Index blocking = -1;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (std::find(working.begin(), working.end(), i) != working.end()) continue;
            const double ap = A.row(i).dot(p);
            if (ap < -1e-14) {
                const double room = std::max(0.0, A.row(i).dot(sol.d) - b(i));
                const double step = room / -ap;
                if (step < alpha) {
                    alpha = step;
                    blocking = i;
                }
            }
        }
        sol.d += alpha * p;
        if (blocking >= 0) working.push_back(blocking);
    }
    sol.ok = false;
    return sol;
}

double max_violation(const OptimProblem& pb, const VectorXd& x) {
    double v = 0.0;
    for (const auto& c : pb.inequality_constraints) v = std::max(v, -c.value(x));
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (pb.lower.size() > 0) v = std::max(v, pb.lower(i) - x(i));
        if (pb.upper.size() > 0) v = std::max(v, x(i) - pb.upper(i));
    }
    return v;
}

}  // namespace

Eigen::VectorXd finite_diff_gradient(const Objective& f, const Eigen::VectorXd& x, double h) {
    VectorXd grad(x.size());
    VectorXd xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        xp(i) = x(i) + h;
        const double fp = f(xp);
        xp(i) = x(i) - h;
        const double fm = f(xp);
        xp(i) = x(i);
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericalError(fmt::format("non-finite objective while differencing coordinate {}", i));
        }
        grad(i) = (fp - fm) / (2.0 * h);
    }
    return grad;
}

Eigen::VectorXd finite_diff_gradient(const Objective& f, const Eigen::VectorXd& x) {
    VectorXd grad(x.size());
    VectorXd xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(x(i)));
        xp(i) = x(i) + h;
        const double fp = f(xp);
        xp(i) = x(i) - h;
        const double fm = f(xp);
        xp(i) = x(i);
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericalError(fmt::format("non-finite objective while differencing coordinate {}", i));
        }
        grad(i) = (fp - fm) / (2.0 * h);
    }
    return grad;
}

OptimResult minimize(const OptimProblem& pb, const Tolerances& tol, int max_iter) {
    const auto n = pb.x0.size();
    const bool has_lower = pb.lower.size() > 0;
    const bool has_upper = pb.upper.size() > 0;
    if ((has_lower && pb.lower.size() != n) || (has_upper && pb.upper.size() != n)) {
        throw ParameterError("bounds dimension does not match x0");
    }

    auto grad_of = [&](const VectorXd& x) -> VectorXd {
        if (pb.gradient) {
            VectorXd g = pb.gradient(x);
            if (g.size() != n) throw ParameterError("gradient dimension does not match x0");
            return g;
        }
        return finite_diff_gradient(pb.objective, x);
    };
    auto constraint_grad = [&](const InequalityConstraint& c, const VectorXd& x) -> VectorXd {
        if (c.gradient) return c.gradient(x);
        return finite_diff_gradient(c.value, x);
    };
    auto clamp_to_bounds = [&](VectorXd x) {
        for (Eigen::Index i = 0; i < n; ++i) {
            if (has_lower) x(i) = std::max(x(i), pb.lower(i));
            if (has_upper) x(i) = std::min(x(i), pb.upper(i));
        }
        return x;
    };
    auto feasible = [&](const VectorXd& x) {
        for (const auto& c : pb.inequality_constraints) {
            const double v = c.value(x);
            if (!(v >= 0.0)) return false;
        }
        return true;
    };

    OptimResult res;
    VectorXd x = pb.x0;
    double f = pb.objective(x);
    if (!std::isfinite(f)) throw NumericalError("objective is not finite at the starting point");
    if (max_violation(pb, x) > 0.0) throw ParameterError("starting point violates a bound or constraint");
    res.history.push_back(f);

    // Constraint rows: linearized inequalities first, then finite bounds.
    std::vector<std::pair<Eigen::Index, double>> bound_rows;  // (coordinate, +1 lower / -1 upper)
    for (Eigen::Index i = 0; i < n; ++i) {
        if (has_lower && std::isfinite(pb.lower(i))) bound_rows.emplace_back(i, 1.0);
        if (has_upper && std::isfinite(pb.upper(i))) bound_rows.emplace_back(i, -1.0);
    }
    const auto n_con = static_cast<Eigen::Index>(pb.inequality_constraints.size());
    const auto m = n_con + static_cast<Eigen::Index>(bound_rows.size());

    auto build_rows = [&](const VectorXd& xx, MatrixXd& A, VectorXd& b) {
        A.setZero(m, n);
        b.setZero(m);
        for (Eigen::Index k = 0; k < n_con; ++k) {
            const auto& c = pb.inequality_constraints[static_cast<std::size_t>(k)];
            A.row(k) = constraint_grad(c, xx).transpose();
            b(k) = std::min(0.0, -c.value(xx));
        }
        for (std::size_t k = 0; k < bound_rows.size(); ++k) {
            const auto [i, sign] = bound_rows[k];
            const auto row = n_con + static_cast<Eigen::Index>(k);
            A(row, i) = sign;
            b(row) = std::min(0.0, sign > 0 ? pb.lower(i) - xx(i) : xx(i) - pb.upper(i));
        }
    };

    MatrixXd B = MatrixXd::Identity(n, n);
    bool b_is_identity = true;
    VectorXd g = grad_of(x);
    MatrixXd A;
    VectorXd b;
    build_rows(x, A, b);

    auto step_scale = [&](const VectorXd& xx) { return std::max(1.0, xx.lpNorm<Eigen::Infinity>()); };

    int it = 0;
    for (; it < max_iter; ++it) {
        const QpSolution qp = solve_qp(B, g, A, b);
        const VectorXd& d = qp.d;
        const VectorXd lagr_grad = g - A.transpose() * qp.lambda;
        if (lagr_grad.lpNorm<Eigen::Infinity>() < tol.projected_grad) {
            res.converged = true;
            res.message = "projected gradient below tolerance";
            break;
        }
        const double slope = g.dot(d);
        if (!(slope < 0.0) || !qp.ok) {
            if (!b_is_identity) {
                B.setIdentity();
                b_is_identity = true;
                continue;
            }
            res.converged = d.lpNorm<Eigen::Infinity>() <= tol.step * step_scale(x);
            res.message = "no descent direction";
            break;
        }

        double alpha = 1.0;
        bool accepted = false;
        VectorXd x_trial;
        double f_trial = 0.0;
        for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
            x_trial = clamp_to_bounds(x + alpha * d);
            if (!feasible(x_trial)) continue;
            f_trial = pb.objective(x_trial);
            if (std::isfinite(f_trial) && f_trial <= f + 1e-4 * alpha * slope) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (!b_is_identity) {
                B.setIdentity();
                b_is_identity = true;
                continue;
            }
            res.converged = d.lpNorm<Eigen::Infinity>() <= tol.step * step_scale(x);
            res.message = "line search failed";
            break;
        }

        const VectorXd s = x_trial - x;
        const VectorXd g_new = grad_of(x_trial);
        MatrixXd A_new;
        VectorXd b_new;
        build_rows(x_trial, A_new, b_new);
        // Lagrangian gradient difference with the current multipliers.
        const VectorXd y = (g_new - A_new.transpose() * qp.lambda) - lagr_grad;
        const double sy = s.dot(y);
        if (b_is_identity && sy > 0.0) {
            B *= y.squaredNorm() / sy;
        }
        const VectorXd bs = B * s;
        const double sbs = s.dot(bs);
        if (sbs > 0.0) {
            VectorXd r = y;
            if (sy < 0.2 * sbs) {
                const double theta = 0.8 * sbs / (sbs - sy);
                r = theta * y + (1.0 - theta) * bs;
            }
            const double sr = s.dot(r);
            if (sr > 0.0) {
                B += r * r.transpose() / sr - bs * bs.transpose() / sbs;
                B = 0.5 * (B + B.transpose()).eval();
                b_is_identity = false;
            }
        }

        const double f_old = f;
        x = x_trial;
        f = f_trial;
        g = g_new;
        A = std::move(A_new);
        b = std::move(b_new);
        res.history.push_back(f);

        const double df = std::abs(f_old - f);
        const double fscale = std::max({std::abs(f_old), std::abs(f), std::numeric_limits<double>::min()});
        if (df <= tol.f_rel * fscale && s.lpNorm<Eigen::Infinity>() <= tol.step * step_scale(x)) {
            res.converged = true;
            res.message = "relative objective change below tolerance";
            ++it;
            break;
        }
    }
    if (it >= max_iter && !res.converged) res.message = "iteration limit reached";

    res.x_star = x;
    res.f_star = f;
    res.iterations = it;
    res.max_constraint_violation = max_violation(pb, x);
    if (res.converged && res.max_constraint_violation > tol.feasibility) res.converged = false;
    return res;
}

}  // namespace volsynth::optim
