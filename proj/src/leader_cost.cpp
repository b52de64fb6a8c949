#include "koopguide/leader_cost.hpp"

#include "koopguide/errors.hpp"

namespace koopguide {

void LeaderWeights::validate() const {
  if ((q1.array() < 0.0).any() || (q2_near.array() < 0.0).any() ||
      (q2_far.array() < 0.0).any() || (r.array() < 0.0).any())
    throw ValidationError("leader weights: diagonals must be >= 0");
  if (!(lambda > 0.0)) throw ValidationError("leader weights: lambda must be > 0");
  if (horizon < 1) throw ValidationError("leader weights: horizon must be >= 1");
  if (!(clearance_margin >= 0.0))
    throw ValidationError("leader weights: clearance_margin must be >= 0");
}

std::string to_string(ObjectiveMode m) {
  return m == ObjectiveMode::ApproachFollower ? "approach_follower"
                                              : "head_to_destination";
}

ObjectiveMode select_objective(const RobotState& xl, const RobotState& xf,
                               double lambda) {
  if (!(lambda > 0.0)) throw PreconditionError("select_objective: lambda <= 0");
  const double dist = (xl.position() - xf.position()).norm();
  return dist > lambda ? ObjectiveMode::ApproachFollower
                       : ObjectiveMode::HeadToDestination;
}

const Eigen::Vector3d& active_q2(const LeaderWeights& w, ObjectiveMode mode) {
  return mode == ObjectiveMode::ApproachFollower ? w.q2_far : w.q2_near;
}

double leader_terminal_cost(const RobotState& xl, const RobotState& xf,
                            const Eigen::Vector3d& q2, const LeaderWeights& w,
                            const RobotState& xd) {
  const Eigen::Vector3d ef = xl.vec() - xf.vec();
  const Eigen::Vector3d ed = xl.vec() - xd.vec();
  return ef.dot(w.q1.asDiagonal() * ef) + ed.dot(q2.asDiagonal() * ed);
}

double leader_stage_cost(const RobotState& xl, const RobotState& xf,
                         const RobotControl& ul, const Eigen::Vector3d& q2,
                         const LeaderWeights& w, const RobotState& xd) {
  const Eigen::Vector2d u = ul.vec();
  return leader_terminal_cost(xl, xf, q2, w, xd) + u.dot(w.r.asDiagonal() * u);
}

HorizonCost leader_horizon_cost(std::span<const RobotState> xl,
                                std::span<const RobotState> xf,
                                std::span<const RobotControl> ul,
                                const Eigen::Vector3d& q2,
                                const LeaderWeights& w, const RobotState& xd) {
  const std::size_t horizon = ul.size();
  if (xl.size() != horizon + 1 || xf.size() != horizon + 1)
    throw PreconditionError("leader_horizon_cost: inconsistent lengths");
  HorizonCost out;
  out.d_xl.resize(horizon + 1);
  out.d_xf.resize(horizon + 1);
  out.d_ul.resize(horizon);
  for (std::size_t t = 0; t <= horizon; ++t) {
    const Eigen::Vector3d ef = xl[t].vec() - xf[t].vec();
    const Eigen::Vector3d ed = xl[t].vec() - xd.vec();
    out.value += ef.dot(w.q1.asDiagonal() * ef) + ed.dot(q2.asDiagonal() * ed);
    const Eigen::Vector3d gf = 2.0 * (w.q1.asDiagonal() * ef);
    out.d_xl[t] = gf + 2.0 * (q2.asDiagonal() * ed);
    out.d_xf[t] = -gf;
    if (t < horizon) {
      const Eigen::Vector2d u = ul[t].vec();
      out.value += u.dot(w.r.asDiagonal() * u);
      out.d_ul[t] = 2.0 * (w.r.asDiagonal() * u);
    }
  }
  return out;
}

}  // namespace koopguide
