#include "koopguide/planner.hpp"

#include <algorithm>

#include "koopguide/errors.hpp"

namespace koopguide {

Eigen::VectorXd shift_controls(const Eigen::VectorXd& z, int stages) {
  if (z.size() != 2 * stages)
    throw PreconditionError("shift_controls: size mismatch");
  Eigen::VectorXd out = z;
  if (stages > 1) {
    out.head(2 * (stages - 1)) = z.tail(2 * (stages - 1));
    out.tail<2>() = z.tail<2>();
  }
  return out;
}

namespace {

bool preferable(const NlpSolution& a, const NlpSolution& b) {
  if (a.status == SolverStatus::EvaluationError) return false;
  if (b.status == SolverStatus::EvaluationError) return true;
  if (a.converged != b.converged) return a.converged;
  const double va = std::max(a.max_eq_violation, a.max_ineq_violation);
  const double vb = std::max(b.max_eq_violation, b.max_ineq_violation);
  if (va != vb) return va < vb;
  return a.objective_value < b.objective_value;
}

}  // namespace

NlpSolution solve_with_restarts(const NlpProblem& p,
                                const std::vector<Eigen::VectorXd>& starts,
                                const SolverOptions& opts) {
  if (starts.empty()) throw PreconditionError("solve_with_restarts: no start points");
  NlpSolution best;
  best.status = SolverStatus::EvaluationError;
  int iterations = 0;
  for (const auto& z0 : starts) {
    NlpSolution s = minimize(p, z0, opts);
    iterations += s.iterations;
    if (best.point.size() == 0 || preferable(s, best)) best = std::move(s);
    if (best.converged) break;
  }
  best.iterations = iterations;
  return best;
}

std::vector<Eigen::VectorXd> turning_starts(int horizon) {
  std::vector<Eigen::VectorXd> out;
  for (double w : {1.5, -1.5}) {
    Eigen::VectorXd z(2 * horizon);
    for (int t = 0; t < horizon; ++t) z.segment<2>(2 * t) << 1.0, w;
    out.push_back(z);
  }
  for (double w : {kMaxTurnRate, -kMaxTurnRate}) {
    Eigen::VectorXd z(2 * horizon);
    for (int t = 0; t < horizon; ++t)
      z.segment<2>(2 * t) << (t < 2 ? 0.0 : 0.5), (t < 2 ? w : 0.0);
    out.push_back(z);
  }
  return out;
}

std::vector<RobotControl> unpack_controls(const Eigen::VectorXd& z,
                                          Eigen::Index offset, int horizon) {
  std::vector<RobotControl> u(horizon);
  for (int t = 0; t < horizon; ++t)
    u[t] = {z(offset + 2 * t), z(offset + 2 * t + 1)};
  return u;
}

ShotRollout shoot(const RobotState& x0, const std::vector<RobotControl>& u,
                  double dt, Eigen::Index n, Eigen::Index offset,
                  bool with_sens) {
  ShotRollout r;
  r.x.reserve(u.size() + 1);
  r.x.push_back(x0);
  if (with_sens) r.sens.push_back(Sensitivity::Zero(3, n));
  for (std::size_t t = 0; t < u.size(); ++t) {
    const RobotState& xt = r.x.back();
    if (with_sens) {
      Sensitivity s = step_state_jacobian(xt, u[t], dt) * r.sens.back();
      s.middleCols(offset + 2 * static_cast<Eigen::Index>(t), 2) +=
          step_control_jacobian(xt, dt);
      r.sens.push_back(std::move(s));
    }
    r.x.push_back(step(xt, u[t], dt));
  }
  return r;
}

}  // namespace koopguide
