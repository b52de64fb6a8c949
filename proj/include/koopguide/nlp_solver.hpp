#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace koopguide {

/// A vector-valued constraint block c(z) together with its Jacobian.
/// The callback fills `value` (size `dim`) and, when `jacobian` is non-null,
/// a dim x n Jacobian. Callbacks may throw DomainError.
struct ConstraintBlock {
  Eigen::Index dim = 0;
  std::function<void(const Eigen::VectorXd& z, Eigen::VectorXd& value,
                     Eigen::MatrixXd* jacobian)>
      eval;
};

/// min f(z)  s.t.  c_eq(z) = 0,  c_ineq(z) >= 0,  lower <= z <= upper.
struct NlpProblem {
  Eigen::Index decision_dim = 0;
  /// Returns f(z); writes the gradient when `grad` is non-null.
  std::function<double(const Eigen::VectorXd& z, Eigen::VectorXd* grad)>
      objective;
  std::vector<ConstraintBlock> eq_constraints;
  std::vector<ConstraintBlock> ineq_constraints;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  Eigen::Index eq_count() const;
  Eigen::Index ineq_count() const;

  /// Stacked constraint values (and Jacobians when requested).
  void eval_eq(const Eigen::VectorXd& z, Eigen::VectorXd& c,
               Eigen::MatrixXd* jac) const;
  void eval_ineq(const Eigen::VectorXd& z, Eigen::VectorXd& c,
                 Eigen::MatrixXd* jac) const;

  /// Throws PreconditionError on inconsistent dimensions.
  void check() const;
};

struct SolverOptions {
  double feas_tol = 1e-4;
  double opt_tol = 1e-4;
  double initial_penalty = 1.0;
  double penalty_growth = 10.0;
  double max_penalty = 1e8;
  int max_outer = 30;
  int max_inner = 200;
  int lbfgs_memory = 8;
};

enum class SolverStatus { Converged, IterationLimit, EvaluationError };

std::string to_string(SolverStatus s);

struct NlpSolution {
  Eigen::VectorXd point;
  double objective_value = 0.0;
  /// Both violations are recomputed from `point` after the solve.
  double max_eq_violation = 0.0;
  double max_ineq_violation = 0.0;
  int iterations = 0;  // total inner iterations
  bool converged = false;
  SolverStatus status = SolverStatus::IterationLimit;
  std::string message;
};

/// Augmented Lagrangian method with a projected limited-memory BFGS inner
/// loop. Fully deterministic. A constrained run that ends unconverged is
/// repeated from x0 with the initial penalty scaled by penalty_growth^2, at
/// most twice. On failure the returned solution carries the
/// best iterate found (lowest violation, then objective) and a non-converged
/// status; an EvaluationError status means the start point itself could not
/// be evaluated.
NlpSolution minimize(const NlpProblem& p, const Eigen::VectorXd& x0,
                     const SolverOptions& opts = {});

/// Central finite-difference gradient of the objective (debug utility).
Eigen::VectorXd fd_objective_gradient(const NlpProblem& p,
                                      const Eigen::VectorXd& z,
                                      double h = 1e-6);

/// Central finite-difference Jacobian of a constraint block.
Eigen::MatrixXd fd_constraint_jacobian(const ConstraintBlock& block,
                                       const Eigen::VectorXd& z,
                                       double h = 1e-6);

}  // namespace koopguide
