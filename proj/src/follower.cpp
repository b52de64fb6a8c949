#include "koopguide/follower.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "koopguide/errors.hpp"

namespace koopguide {

void FollowerWeights::validate() const {
  if ((q1.array() < 0.0).any() || (q2.array() < 0.0).any() ||
      (r.array() < 0.0).any())
    throw ValidationError("follower weights: diagonals must be >= 0");
  if (!(mu > 0.0)) throw ValidationError("follower weights: mu must be > 0");
}

void GridSpec::validate() const {
  if (nv < 2 || nw < 2)
    throw ValidationError("grid: nv and nw must be at least 2");
}

double GridSpec::v_at(int i) const {
  return kMinSpeed + (kMaxSpeed - kMinSpeed) * i / (nv - 1);
}

double GridSpec::omega_at(int k) const {
  return -kMaxTurnRate + 2.0 * kMaxTurnRate * k / (nw - 1);
}

double follower_cost(const RobotState& xf, const RobotControl& uf,
                     const RobotState& xl, const RobotControl& ul,
                     const FollowerWeights& w, const Environment& env,
                     double dt) {
  const Eigen::Vector3d f_next = step(xf, uf, dt).vec();
  const Eigen::Vector3d l_next = step(xl, ul, dt).vec();
  const Eigen::Vector3d e_pursuit = f_next - l_next;
  const Eigen::Vector3d e_goal = f_next - env.destination.vec();
  const double align = std::cos(l_next(2)) * std::cos(f_next(2)) +
                       std::sin(l_next(2)) * std::sin(f_next(2));
  const Eigen::Vector2d u = uf.vec();
  return e_pursuit.dot(w.q1.asDiagonal() * e_pursuit) +
         e_goal.dot(w.q2.asDiagonal() * e_goal) + w.q3 * align +
         u.dot(w.r.asDiagonal() * u);
}

double penalized_follower_cost(const RobotState& xf, const RobotControl& uf,
                               const RobotState& xl, const RobotControl& ul,
                               const FollowerWeights& w,
                               const Environment& env, double dt) {
  const RobotState f_next = step(xf, uf, dt);
  return follower_cost(xf, uf, xl, ul, w, env, dt) +
         barrier_penalty(env, f_next.position(), w.mu);
}

namespace {

// Gradient of J~ with respect to the follower successor state.
Eigen::Vector3d successor_gradient(const Eigen::Vector3d& f_next,
                                   const Eigen::Vector3d& l_next,
                                   const FollowerWeights& w,
                                   const Environment& env) {
  Eigen::Vector3d g = 2.0 * (w.q1.asDiagonal() * (f_next - l_next)) +
                      2.0 * (w.q2.asDiagonal() * (f_next - env.destination.vec()));
  g.head<2>() += barrier_gradient(env, f_next.head<2>(), w.mu);
  g(2) -= w.q3 * std::sin(f_next(2) - l_next(2));
  return g;
}

}  // namespace

Eigen::Vector2d follower_cost_gradient(const RobotControl& uf,
                                       const RobotState& xf,
                                       const RobotState& xl,
                                       const RobotControl& ul,
                                       const FollowerWeights& w,
                                       const Environment& env, double dt) {
  const Eigen::Vector3d f_next = step(xf, uf, dt).vec();
  const Eigen::Vector3d l_next = step(xl, ul, dt).vec();
  const Eigen::Vector3d g = successor_gradient(f_next, l_next, w, env);
  return step_control_jacobian(xf, dt).transpose() * g +
         2.0 * (w.r.asDiagonal() * uf.vec());
}

StationarityTerms follower_stationarity(const RobotState& xf,
                                        const RobotControl& uf,
                                        const RobotState& xl,
                                        const RobotControl& ul,
                                        const FollowerWeights& w,
                                        const Environment& env, double dt) {
  const Eigen::Vector3d f_next = step(xf, uf, dt).vec();
  const Eigen::Vector3d l_next = step(xl, ul, dt).vec();
  const Eigen::Vector3d g = successor_gradient(f_next, l_next, w, env);
  const double c_align = std::cos(f_next(2) - l_next(2));

  Eigen::Matrix3d h_ff = Eigen::Matrix3d::Zero();
  h_ff.diagonal() = 2.0 * (w.q1 + w.q2);
  h_ff.topLeftCorner<2, 2>() += barrier_hessian(env, f_next.head<2>(), w.mu);
  h_ff(2, 2) -= w.q3 * c_align;

  Eigen::Matrix3d h_fl = Eigen::Matrix3d::Zero();
  h_fl.diagonal() = -2.0 * w.q1;
  h_fl(2, 2) += w.q3 * c_align;

  const Eigen::Matrix<double, 3, 2> bu = step_control_jacobian(xf, dt);
  Eigen::Matrix<double, 3, 2> dbu_dtheta = Eigen::Matrix<double, 3, 2>::Zero();
  dbu_dtheta(0, 0) = -std::sin(xf.theta) * dt;
  dbu_dtheta(1, 0) = std::cos(xf.theta) * dt;

  StationarityTerms out;
  out.s = bu.transpose() * g + 2.0 * (w.r.asDiagonal() * uf.vec());
  out.d_uf = bu.transpose() * h_ff * bu;
  out.d_uf.diagonal() += 2.0 * w.r;
  out.d_xf = bu.transpose() * h_ff * step_state_jacobian(xf, uf, dt);
  out.d_xf.col(2) += dbu_dtheta.transpose() * g;
  out.d_xl = bu.transpose() * h_fl * step_state_jacobian(xl, ul, dt);
  out.d_ul = bu.transpose() * h_fl * step_control_jacobian(xl, dt);
  return out;
}

RobotControl best_response(const JointState& x, const RobotControl& ul,
                           const FollowerWeights& w, const Environment& env,
                           const GridSpec& grid, double dt) {
  grid.validate();
  const RobotState& xf = x.follower;
  const Eigen::Vector3d l_next = step(x.leader, ul, dt).vec();
  const Eigen::Vector3d goal = env.destination.vec();
  const double cl = std::cos(l_next(2));
  const double sl = std::sin(l_next(2));
  const double ct = std::cos(xf.theta);
  const double st = std::sin(xf.theta);

  // The successor position depends on v only and the successor heading on
  // omega only, so the two factors are tabulated separately.
  std::vector<double> pos_cost(grid.nv);
  std::vector<char> pos_ok(grid.nv);
  for (int i = 0; i < grid.nv; ++i) {
    const double v = grid.v_at(i);
    const Eigen::Vector2d p{xf.px + v * ct * dt, xf.py + v * st * dt};
    pos_ok[i] = env.bounds.contains(p) && env.is_safe(p);
    const Eigen::Vector2d ep = p - l_next.head<2>();
    const Eigen::Vector2d eg = p - goal.head<2>();
    pos_cost[i] = w.q1(0) * ep(0) * ep(0) + w.q1(1) * ep(1) * ep(1) +
                  w.q2(0) * eg(0) * eg(0) + w.q2(1) * eg(1) * eg(1) +
                  w.r(0) * v * v;
  }
  std::vector<double> head_cost(grid.nw);
  for (int k = 0; k < grid.nw; ++k) {
    const double om = grid.omega_at(k);
    const double th = xf.theta + om * dt;
    const double dl = th - l_next(2);
    const double dg = th - goal(2);
    head_cost[k] = w.q1(2) * dl * dl + w.q2(2) * dg * dg +
                   w.q3 * (cl * std::cos(th) + sl * std::sin(th)) +
                   w.r(1) * om * om;
  }

  double best = std::numeric_limits<double>::infinity();
  int bi = -1;
  int bk = -1;
  for (int i = 0; i < grid.nv; ++i) {
    if (!pos_ok[i]) continue;
    for (int k = 0; k < grid.nw; ++k) {
      const double c = pos_cost[i] + head_cost[k];
      if (c < best) {
        best = c;
        bi = i;
        bk = k;
      }
    }
  }
  if (bi < 0)
    throw InfeasibleError("best_response: no grid control keeps the follower "
                          "safe at (" + std::to_string(xf.px) + ", " +
                          std::to_string(xf.py) + ")");
  return {grid.v_at(bi), grid.omega_at(bk)};
}

RobotState feedback_step(const JointState& x, const RobotControl& ul,
                         const FollowerWeights& w, const Environment& env,
                         const GridSpec& grid, double dt) {
  return step(x.follower, best_response(x, ul, w, env, grid, dt), dt);
}

}  // namespace koopguide
