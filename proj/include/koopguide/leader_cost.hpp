#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "koopguide/dynamics.hpp"

namespace koopguide {

struct LeaderWeights {
  Eigen::Vector3d q1{2.0, 2.0, 0.0};
  Eigen::Vector3d q2_near{1.0, 1.0, 0.0};  // used when heading to destination
  Eigen::Vector3d q2_far{0.1, 0.1, 0.0};   // used when returning to follower
  Eigen::Vector2d r{2.0, 1.0};
  double lambda = 1.0;
  int horizon = 5;
  /// Leader obstacle constraints require clearance >= clearance_margin.
  double clearance_margin = 0.05;

  void validate() const;
};

/// Scenario switch of the receding-horizon loop.
enum class ObjectiveMode { ApproachFollower, HeadToDestination };

std::string to_string(ObjectiveMode m);

/// Position distance > lambda selects ApproachFollower, otherwise
/// HeadToDestination.
ObjectiveMode select_objective(const RobotState& xl, const RobotState& xf,
                               double lambda);

/// Destination weight for the chosen mode.
const Eigen::Vector3d& active_q2(const LeaderWeights& w, ObjectiveMode mode);

/// ||xl - xf||^2_Q1 + ||xl - xd||^2_Q2 + ||ul||^2_R.
double leader_stage_cost(const RobotState& xl, const RobotState& xf,
                         const RobotControl& ul, const Eigen::Vector3d& q2,
                         const LeaderWeights& w, const RobotState& xd);

/// Stage cost without the control term.
double leader_terminal_cost(const RobotState& xl, const RobotState& xf,
                            const Eigen::Vector3d& q2, const LeaderWeights& w,
                            const RobotState& xd);

/// Sum of stage costs over t = 0..T-1 plus terminal cost at T, with partial
/// derivatives with respect to every state and leader control.
struct HorizonCost {
  double value = 0.0;
  std::vector<Eigen::Vector3d> d_xl;  // size T+1
  std::vector<Eigen::Vector3d> d_xf;  // size T+1
  std::vector<Eigen::Vector2d> d_ul;  // size T
};

HorizonCost leader_horizon_cost(std::span<const RobotState> xl,
                                std::span<const RobotState> xf,
                                std::span<const RobotControl> ul,
                                const Eigen::Vector3d& q2,
                                const LeaderWeights& w, const RobotState& xd);

}  // namespace koopguide
