#include "koopguide/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include "koopguide/errors.hpp"

namespace koopguide {

RobotState step(const RobotState& x, const RobotControl& u, double dt) {
  if (!(dt > 0.0)) throw PreconditionError("step: dt must be positive");
  return {x.px + u.v * std::cos(x.theta) * dt,
          x.py + u.v * std::sin(x.theta) * dt, x.theta + u.omega * dt};
}

std::vector<RobotState> rollout(const RobotState& x0,
                                std::span<const RobotControl> us, double dt) {
  std::vector<RobotState> out;
  out.reserve(us.size());
  RobotState x = x0;
  for (const auto& u : us) {
    x = step(x, u, dt);
    out.push_back(x);
  }
  return out;
}

RobotControl clamp_control(const RobotControl& u) {
  return {std::clamp(u.v, kMinSpeed, kMaxSpeed),
          std::clamp(u.omega, -kMaxTurnRate, kMaxTurnRate)};
}

Eigen::Matrix3d step_state_jacobian(const RobotState& x, const RobotControl& u,
                                    double dt) {
  Eigen::Matrix3d a = Eigen::Matrix3d::Identity();
  a(0, 2) = -u.v * std::sin(x.theta) * dt;
  a(1, 2) = u.v * std::cos(x.theta) * dt;
  return a;
}

Eigen::Matrix<double, 3, 2> step_control_jacobian(const RobotState& x,
                                                  double dt) {
  Eigen::Matrix<double, 3, 2> b = Eigen::Matrix<double, 3, 2>::Zero();
  b(0, 0) = std::cos(x.theta) * dt;
  b(1, 0) = std::sin(x.theta) * dt;
  b(2, 1) = dt;
  return b;
}

}  // namespace koopguide
