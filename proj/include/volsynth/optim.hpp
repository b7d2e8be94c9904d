#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace volsynth::optim {

using Objective = std::function<double(const Eigen::VectorXd&)>;
using Gradient = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Feasible set is value(x) >= 0. `gradient` may be left empty.
struct InequalityConstraint {
    std::function<double(const Eigen::VectorXd&)> value;
    Gradient gradient;
};

struct OptimProblem {
    Objective objective;
    Gradient gradient;  // empty -> central finite differences
    std::vector<InequalityConstraint> inequality_constraints;
    Eigen::VectorXd lower;  // empty or size n; -inf entries mean unbounded
    Eigen::VectorXd upper;
    Eigen::VectorXd x0;
};

struct Tolerances {
    double f_rel = 1e-9;        // relative objective change between accepted iterates
    double step = 1e-6;        // accepted step (inf-norm), relative to max(1, |x|)
    double projected_grad = 1e-7;
    double feasibility = 1e-8;
};

struct OptimResult {
    Eigen::VectorXd x_star;
    double f_star = 0.0;
    int iterations = 0;
    bool converged = false;
    double max_constraint_violation = 0.0;
    std::vector<double> history;  // objective at x0 and after every accepted step
    std::string message;
};

/**
 * Sequential quadratic programming with a damped BFGS Hessian model.
 *
 * Each iteration solves a convex QP over the linearized inequality
 * constraints and the bounds, then backtracks along the QP direction until
 * the trial point is feasible for the true constraints, finite, and gives
 * sufficient decrease. Iterates stay feasible, so the objective itself is
 * the merit function and the returned f_star never exceeds f(x0).
 *
 * Converges when the Lagrangian gradient (inf-norm) falls below
 * `projected_grad`, or when an accepted step changes the objective by less
 * than `f_rel` relative while moving x by less than `step`.
 *
 * Throws NumericalError if the objective is not finite at x0 and
 * ParameterError if x0 violates a bound or constraint.
 */
OptimResult minimize(const OptimProblem& problem, const Tolerances& tol = {}, int max_iter = 500);

/// Central differences with a common step h.
Eigen::VectorXd finite_diff_gradient(const Objective& f, const Eigen::VectorXd& x, double h);

/// Central differences with per-coordinate step 1e-6 * max(1, |x_i|).
Eigen::VectorXd finite_diff_gradient(const Objective& f, const Eigen::VectorXd& x);

}  // namespace volsynth::optim
