#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

namespace koopguide {

/// Unicycle pose. Heading is kept unwrapped.
struct RobotState {
  double px = 0.0;
  double py = 0.0;
  double theta = 0.0;

  Eigen::Vector3d vec() const { return {px, py, theta}; }
  Eigen::Vector2d position() const { return {px, py}; }
  static RobotState from(const Eigen::Ref<const Eigen::Vector3d>& v) {
    return {v(0), v(1), v(2)};
  }
  bool operator==(const RobotState&) const = default;
};

/// Linear and angular velocity command.
struct RobotControl {
  double v = 0.0;
  double omega = 0.0;

  Eigen::Vector2d vec() const { return {v, omega}; }
  static RobotControl from(const Eigen::Ref<const Eigen::Vector2d>& u) {
    return {u(0), u(1)};
  }
  bool operator==(const RobotControl&) const = default;
};

struct JointState {
  RobotState leader;
  RobotState follower;
  bool operator==(const JointState&) const = default;
};

/// Admissible control box [0,2] x [-2,2].
inline constexpr double kMinSpeed = 0.0;
inline constexpr double kMaxSpeed = 2.0;
inline constexpr double kMaxTurnRate = 2.0;
inline constexpr double kDefaultDt = 0.2;

/// x + [v cos(theta), v sin(theta), omega] * dt.
RobotState step(const RobotState& x, const RobotControl& u, double dt);

/// Iterates step; output[k] is the state after applying us[k].
std::vector<RobotState> rollout(const RobotState& x0,
                                std::span<const RobotControl> us, double dt);

RobotControl clamp_control(const RobotControl& u);

/// Jacobian of step with respect to the state.
Eigen::Matrix3d step_state_jacobian(const RobotState& x, const RobotControl& u,
                                    double dt);
/// Jacobian of step with respect to the control (depends on heading only).
Eigen::Matrix<double, 3, 2> step_control_jacobian(const RobotState& x,
                                                  double dt);

}  // namespace koopguide
