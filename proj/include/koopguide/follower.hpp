#pragma once

#include <Eigen/Core>

#include "koopguide/dynamics.hpp"
#include "koopguide/environment.hpp"

namespace koopguide {

/// Ground-truth follower objective weights (diagonals stored as vectors).
struct FollowerWeights {
  Eigen::Vector3d q1{10.0, 10.0, 0.0};  // pursuit of the leader
  Eigen::Vector3d q2{0.1, 0.1, 0.0};    // attraction to the destination
  double q3 = -1.0;                     // heading alignment
  Eigen::Vector2d r{2.0, 0.05};         // control effort
  double mu = 10.0;                     // barrier weight is 1/mu

  void validate() const;
};

/// Resolution of the best-response grid over [0,2] x [-2,2].
struct GridSpec {
  int nv = 41;
  int nw = 41;

  void validate() const;
  double v_at(int i) const;
  double omega_at(int k) const;
};

/// One-step follower cost J^F evaluated at the successor states.
double follower_cost(const RobotState& xf, const RobotControl& uf,
                     const RobotState& xl, const RobotControl& ul,
                     const FollowerWeights& w, const Environment& env,
                     double dt);

/// J^F plus the log barrier on the follower successor. Throws DomainError
/// when the successor is not strictly safe.
double penalized_follower_cost(const RobotState& xf, const RobotControl& uf,
                               const RobotState& xl, const RobotControl& ul,
                               const FollowerWeights& w,
                               const Environment& env, double dt);

/// Gradient of penalized_follower_cost with respect to uf.
Eigen::Vector2d follower_cost_gradient(const RobotControl& uf,
                                       const RobotState& xf,
                                       const RobotState& xl,
                                       const RobotControl& ul,
                                       const FollowerWeights& w,
                                       const Environment& env, double dt);

/// The stationarity map s = grad_uf J~ and its partial derivatives. These
/// are the building blocks of the first-order-condition planner and of the
/// smooth feedback predictor.
struct StationarityTerms {
  Eigen::Vector2d s;
  Eigen::Matrix2d d_uf;                  // Hessian of J~ in uf
  Eigen::Matrix<double, 2, 3> d_xf;
  Eigen::Matrix<double, 2, 3> d_xl;
  Eigen::Matrix2d d_ul;
};

StationarityTerms follower_stationarity(const RobotState& xf,
                                        const RobotControl& uf,
                                        const RobotState& xl,
                                        const RobotControl& ul,
                                        const FollowerWeights& w,
                                        const Environment& env, double dt);

/// Exhaustive grid minimizer of J^F subject to a strictly safe, in-bounds
/// successor. Ties go to the lexicographically smallest (v, omega).
/// Throws InfeasibleError when no grid point is admissible.
RobotControl best_response(const JointState& x, const RobotControl& ul,
                           const FollowerWeights& w, const Environment& env,
                           const GridSpec& grid, double dt);

/// Follower feedback dynamics: step(xf, best_response(...)).
RobotState feedback_step(const JointState& x, const RobotControl& ul,
                         const FollowerWeights& w, const Environment& env,
                         const GridSpec& grid, double dt);

}  // namespace koopguide
