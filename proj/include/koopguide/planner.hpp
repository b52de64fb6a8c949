#pragma once

#include <string>
#include <vector>

#include "koopguide/dynamics.hpp"
#include "koopguide/leader_cost.hpp"
#include "koopguide/nlp_solver.hpp"

namespace koopguide {

/// Outcome of one receding-horizon planning call.
struct PlanResult {
  RobotControl control;                       // first control to apply
  std::vector<RobotControl> leader_controls;  // full optimized sequence
  std::vector<RobotState> predicted_follower; // states 1..T as predicted
  ObjectiveMode mode = ObjectiveMode::HeadToDestination;
  SolverStatus status = SolverStatus::Converged;
  /// Set when the solver did not converge and the best iterate was used.
  bool flagged = false;
};

/// Common interface of every leader planner run through the guidance loop.
/// Planners keep warm-start state and are not meant to be shared.
class LeaderPlanner {
 public:
  virtual ~LeaderPlanner() = default;
  virtual std::string name() const = 0;
  virtual PlanResult plan(const JointState& x) = 0;
  /// Drops warm-start state.
  virtual void reset() = 0;
};

/// Shifts a stacked control sequence (pairs) forward by one stage,
/// repeating the last stage.
Eigen::VectorXd shift_controls(const Eigen::VectorXd& z, int stages);

/// Runs the solver from each start in turn until one converges and returns
/// the best result seen: converged first, then lowest violation, then lowest
/// objective.
NlpSolution solve_with_restarts(const NlpProblem& p,
                                const std::vector<Eigen::VectorXd>& starts,
                                const SolverOptions& opts);

/// Leader control sequences used as restart points: constant arcs, then
/// pivot-in-place-and-drive sequences. At v = 0 the heading rate has no
/// first-order effect on position, so a planner stuck there needs a start
/// that already turns.
std::vector<Eigen::VectorXd> turning_starts(int horizon);

/// Controls stored as pairs in z starting at `offset`.
std::vector<RobotControl> unpack_controls(const Eigen::VectorXd& z,
                                          Eigen::Index offset, int horizon);

using Sensitivity = Eigen::Matrix<double, 3, Eigen::Dynamic>;

/// Single-shooting rollout x_0..x_T with sensitivities d x_t / d z, where
/// this robot's controls occupy columns [offset, offset + 2T) of an
/// n-dimensional decision vector.
struct ShotRollout {
  std::vector<RobotState> x;
  std::vector<Sensitivity> sens;  // empty unless requested
};

ShotRollout shoot(const RobotState& x0, const std::vector<RobotControl>& u,
                  double dt, Eigen::Index n, Eigen::Index offset,
                  bool with_sens);

}  // namespace koopguide
