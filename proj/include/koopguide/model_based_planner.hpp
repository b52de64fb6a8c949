#pragma once

#include <optional>
#include <vector>

#include "koopguide/environment.hpp"
#include "koopguide/follower.hpp"
#include "koopguide/leader_cost.hpp"
#include "koopguide/nlp_solver.hpp"
#include "koopguide/planner.hpp"

namespace koopguide {

/// Single-level OCP obtained by replacing each myopic follower problem with
/// its first-order condition. Decision vector (single shooting):
///   z = [u^L_0 .. u^L_{T-1}, u^F_0 .. u^F_{T-1}]   (4T entries).
/// Equality block (2T): box-projected stationarity residual
///   r_t = u^F_t - Proj_U(u^F_t - grad J~^F_t), which equals grad J~^F_t when
///   u^F_t is interior to the control box.
/// Inequality block (M*T): c_j(x^L_t) >= 0 for t = 1..T (t-major).
NlpProblem build_foc_problem(const JointState& x0, const Environment& env,
                             const LeaderWeights& lw,
                             const FollowerWeights& fw, double dt,
                             ObjectiveMode mode);

/// Unprojected stationarity gradients grad_{u^F_t} J~^F_t for a decision
/// vector, stacked per stage (2T entries).
Eigen::VectorXd foc_stationarity(const JointState& x0, const Eigen::VectorXd& z,
                                 const Environment& env,
                                 const LeaderWeights& lw,
                                 const FollowerWeights& fw, double dt);

struct FocPlan {
  std::vector<RobotControl> leader_controls;
  std::vector<RobotControl> follower_controls;
  std::vector<JointState> predicted;  // x_0 .. x_T
  NlpSolution solution;
  ObjectiveMode mode = ObjectiveMode::HeadToDestination;
};

/// Solves the FOC problem from `warm_start` (4T entries) or zeros.
FocPlan solve_foc(const JointState& x0, const Environment& env,
                  const LeaderWeights& lw, const FollowerWeights& fw,
                  double dt, const SolverOptions& opts,
                  const Eigen::VectorXd* warm_start = nullptr);

/// Baseline leader that knows the follower's objective.
class ModelBasedPlanner : public LeaderPlanner {
 public:
  ModelBasedPlanner(Environment env, LeaderWeights lw, FollowerWeights fw,
                    double dt, SolverOptions opts = {});

  std::string name() const override { return "foc"; }
  PlanResult plan(const JointState& x) override;
  void reset() override { warm_.reset(); }

  const FocPlan& last_plan() const { return last_; }

 private:
  Environment env_;
  LeaderWeights lw_;
  FollowerWeights fw_;
  double dt_;
  SolverOptions opts_;
  std::optional<Eigen::VectorXd> warm_;
  FocPlan last_;
};

}  // namespace koopguide
