#include "koopguide/model_based_planner.hpp"

#include <memory>

#include "koopguide/errors.hpp"

namespace koopguide {

namespace {

struct FocContext {
  JointState x0;
  Environment env;
  LeaderWeights lw;
  FollowerWeights fw;
  double dt;
  Eigen::Vector3d q2;
  int horizon;
  Eigen::Index n;
};

}  // namespace

NlpProblem build_foc_problem(const JointState& x0, const Environment& env,
                             const LeaderWeights& lw,
                             const FollowerWeights& fw, double dt,
                             ObjectiveMode mode) {
  lw.validate();
  fw.validate();
  const int horizon = lw.horizon;
  const Eigen::Index n = 4 * horizon;
  const Eigen::Index m = static_cast<Eigen::Index>(env.obstacles.size());
  auto ctx = std::make_shared<const FocContext>(
      FocContext{x0, env, lw, fw, dt, active_q2(lw, mode), horizon, n});

  NlpProblem p;
  p.decision_dim = n;
  p.lower.resize(n);
  p.upper.resize(n);
  for (Eigen::Index i = 0; i < n; i += 2) {
    p.lower.segment<2>(i) << kMinSpeed, -kMaxTurnRate;
    p.upper.segment<2>(i) << kMaxSpeed, kMaxTurnRate;
  }

  p.objective = [ctx](const Eigen::VectorXd& z, Eigen::VectorXd* grad) {
    const int horizon = ctx->horizon;
    const auto ul = unpack_controls(z, 0, horizon);
    const auto uf = unpack_controls(z, 2 * horizon, horizon);
    const bool ws = grad != nullptr;
    const auto lr = shoot(ctx->x0.leader, ul, ctx->dt, ctx->n, 0, ws);
    const auto fr = shoot(ctx->x0.follower, uf, ctx->dt, ctx->n, 2 * horizon, ws);
    const HorizonCost hc = leader_horizon_cost(lr.x, fr.x, ul, ctx->q2, ctx->lw,
                                               ctx->env.destination);
    if (grad) {
      grad->setZero(ctx->n);
      for (int t = 0; t <= horizon; ++t) {
        *grad += lr.sens[t].transpose() * hc.d_xl[t];
        *grad += fr.sens[t].transpose() * hc.d_xf[t];
      }
      for (int t = 0; t < horizon; ++t) grad->segment<2>(2 * t) += hc.d_ul[t];
    }
    return hc.value;
  };

  ConstraintBlock eq;
  eq.dim = 2 * horizon;
  eq.eval = [ctx](const Eigen::VectorXd& z, Eigen::VectorXd& c,
                  Eigen::MatrixXd* jac) {
    const int horizon = ctx->horizon;
    const auto ul = unpack_controls(z, 0, horizon);
    const auto uf = unpack_controls(z, 2 * horizon, horizon);
    const bool ws = jac != nullptr;
    const auto lr = shoot(ctx->x0.leader, ul, ctx->dt, ctx->n, 0, ws);
    const auto fr = shoot(ctx->x0.follower, uf, ctx->dt, ctx->n, 2 * horizon, ws);
    c.resize(2 * horizon);
    if (jac) jac->setZero(2 * horizon, ctx->n);
    const Eigen::Vector2d lo{kMinSpeed, -kMaxTurnRate};
    const Eigen::Vector2d hi{kMaxSpeed, kMaxTurnRate};
    for (int t = 0; t < horizon; ++t) {
      const StationarityTerms st = follower_stationarity(
          fr.x[t], uf[t], lr.x[t], ul[t], ctx->fw, ctx->env, ctx->dt);
      Eigen::Matrix<double, 2, Eigen::Dynamic> ds;
      if (jac) {
        ds = st.d_xf * fr.sens[t] + st.d_xl * lr.sens[t];
        ds.middleCols<2>(2 * horizon + 2 * t) += st.d_uf;
        ds.middleCols<2>(2 * t) += st.d_ul;
      }
      const Eigen::Vector2d u = uf[t].vec();
      for (int i = 0; i < 2; ++i) {
        const Eigen::Index row = 2 * t + i;
        const double trial = u(i) - st.s(i);
        if (trial > lo(i) && trial < hi(i)) {
          c(row) = st.s(i);
          if (jac) jac->row(row) = ds.row(i);
        } else {
          const double bound = trial <= lo(i) ? lo(i) : hi(i);
          c(row) = u(i) - bound;
          if (jac) (*jac)(row, 2 * horizon + 2 * t + i) = 1.0;
        }
      }
    }
  };
  p.eq_constraints.push_back(std::move(eq));

  if (m > 0) {
    ConstraintBlock in;
    in.dim = m * horizon;
    in.eval = [ctx, m](const Eigen::VectorXd& z, Eigen::VectorXd& c,
                       Eigen::MatrixXd* jac) {
      const int horizon = ctx->horizon;
      const auto ul = unpack_controls(z, 0, horizon);
      const auto lr = shoot(ctx->x0.leader, ul, ctx->dt, ctx->n, 0, jac != nullptr);
      c.resize(m * horizon);
      if (jac) jac->setZero(m * horizon, ctx->n);
      for (int t = 1; t <= horizon; ++t) {
        const Eigen::Vector2d p = lr.x[t].position();
        for (Eigen::Index j = 0; j < m; ++j) {
          const Eigen::Index row = (t - 1) * m + j;
          const auto& ob = ctx->env.obstacles[j];
          c(row) = obstacle_clearance(ob, p) - ctx->lw.clearance_margin;
          if (jac)
            jac->row(row) =
                clearance_gradient(ob, p).transpose() * lr.sens[t].topRows<2>();
        }
      }
    };
    p.ineq_constraints.push_back(std::move(in));
  }
  return p;
}

Eigen::VectorXd foc_stationarity(const JointState& x0, const Eigen::VectorXd& z,
                                 const Environment& env,
                                 const LeaderWeights& lw,
                                 const FollowerWeights& fw, double dt) {
  const int horizon = lw.horizon;
  if (z.size() != 4 * horizon)
    throw PreconditionError("foc_stationarity: decision vector size");
  const auto ul = unpack_controls(z, 0, horizon);
  const auto uf = unpack_controls(z, 2 * horizon, horizon);
  RobotState xl = x0.leader, xf = x0.follower;
  Eigen::VectorXd s(2 * horizon);
  for (int t = 0; t < horizon; ++t) {
    s.segment<2>(2 * t) = follower_cost_gradient(uf[t], xf, xl, ul[t], fw, env, dt);
    xl = step(xl, ul[t], dt);
    xf = step(xf, uf[t], dt);
  }
  return s;
}

FocPlan solve_foc(const JointState& x0, const Environment& env,
                  const LeaderWeights& lw, const FollowerWeights& fw,
                  double dt, const SolverOptions& opts,
                  const Eigen::VectorXd* warm_start) {
  const ObjectiveMode mode = select_objective(x0.leader, x0.follower, lw.lambda);
  const NlpProblem p = build_foc_problem(x0, env, lw, fw, dt, mode);
  const int horizon = lw.horizon;

  std::vector<Eigen::VectorXd> starts;
  if (warm_start) {
    if (warm_start->size() != p.decision_dim)
      throw PreconditionError("solve_foc: warm start has the wrong size");
    starts.push_back(*warm_start);
  }
  starts.push_back(Eigen::VectorXd::Zero(p.decision_dim));
  for (const auto& leader : turning_starts(horizon)) {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(p.decision_dim);
    z.head(2 * horizon) = leader;
    starts.push_back(z);
  }
  const NlpSolution sol = solve_with_restarts(p, starts, opts);

  FocPlan plan;
  plan.mode = mode;
  plan.solution = sol;
  plan.leader_controls = unpack_controls(sol.point, 0, horizon);
  plan.follower_controls = unpack_controls(sol.point, 2 * horizon, horizon);
  plan.predicted.push_back(x0);
  for (int t = 0; t < horizon; ++t) {
    const JointState& prev = plan.predicted.back();
    plan.predicted.push_back({step(prev.leader, plan.leader_controls[t], dt),
                              step(prev.follower, plan.follower_controls[t], dt)});
  }
  return plan;
}

ModelBasedPlanner::ModelBasedPlanner(Environment env, LeaderWeights lw,
                                     FollowerWeights fw, double dt,
                                     SolverOptions opts)
    : env_(std::move(env)), lw_(lw), fw_(fw), dt_(dt), opts_(opts) {}

PlanResult ModelBasedPlanner::plan(const JointState& x) {
  last_ = solve_foc(x, env_, lw_, fw_, dt_, opts_, warm_ ? &*warm_ : nullptr);
  const int horizon = lw_.horizon;
  const Eigen::VectorXd& z = last_.solution.point;
  Eigen::VectorXd next(z.size());
  next.head(2 * horizon) = shift_controls(z.head(2 * horizon), horizon);
  next.tail(2 * horizon) = shift_controls(z.tail(2 * horizon), horizon);
  warm_ = next;

  PlanResult r;
  r.control = last_.leader_controls.front();
  r.leader_controls = last_.leader_controls;
  for (int t = 1; t <= horizon; ++t)
    r.predicted_follower.push_back(last_.predicted[t].follower);
  r.mode = last_.mode;
  r.status = last_.solution.status;
  r.flagged = !last_.solution.converged;
  return r;
}

}  // namespace koopguide
