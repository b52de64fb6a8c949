#pragma once

#include <vector>

#include "koopguide/dynamics.hpp"

namespace koopguide {

/// One interaction record of S steps: states 0..S for both robots and
/// controls 0..S-1. Learners only read the follower states and the leader
/// state/control pairs; follower_controls may be empty for synthetic data.
struct Trajectory {
  std::vector<RobotState> leader;
  std::vector<RobotState> follower;
  std::vector<RobotControl> leader_controls;
  std::vector<RobotControl> follower_controls;

  std::size_t steps() const { return leader_controls.size(); }
  bool operator==(const Trajectory&) const = default;
};

/// Leader input w^L_t = [x^L_t; u^L_t].
struct LeaderInput {
  RobotState state;
  RobotControl control;
};

}  // namespace koopguide
