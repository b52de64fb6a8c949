#include "koopguide/rh_planner.hpp"

#include <chrono>
#include <fstream>

#include "koopguide/errors.hpp"

namespace koopguide {

namespace {

struct KpContext {
  JointState x0;
  Eigen::VectorXd y0;
  std::shared_ptr<const FollowerPredictor> predictor;
  Environment env;
  LeaderWeights lw;
  Eigen::Vector3d q2;
  double dt;
  int horizon;
};

struct LatentRollout {
  std::vector<RobotState> xf;
  std::vector<Eigen::MatrixXd> sens;  // d y_t / d z
};

LatentRollout latent_rollout(const KpContext& c, const ShotRollout& lr,
                             const std::vector<RobotControl>& ul, bool with_sens) {
  const Eigen::Index n = 2 * c.horizon;
  LatentRollout r;
  Eigen::VectorXd y = c.y0;
  r.xf.push_back(c.x0.follower);
  Eigen::MatrixXd s;
  if (with_sens) {
    s = Eigen::MatrixXd::Zero(y.size(), n);
    r.sens.push_back(s);
  }
  PredictorJacobian jac;
  for (int t = 0; t < c.horizon; ++t) {
    const Eigen::VectorXd next =
        c.predictor->advance(y, lr.x[t], ul[t], with_sens ? &jac : nullptr);
    if (with_sens) {
      Eigen::MatrixXd ns = jac.d_y * s + jac.d_xl * lr.sens[t];
      ns.middleCols(2 * t, 2) += jac.d_ul;
      s = std::move(ns);
      r.sens.push_back(s);
    }
    y = next;
    r.xf.push_back(RobotState::from(y.head<3>()));
  }
  return r;
}

void clearance_block(const Environment& env, const std::vector<RobotState>& x,
                     const std::vector<Eigen::MatrixXd>* sens, double margin,
                     Eigen::VectorXd& c, Eigen::MatrixXd* jac, Eigen::Index n) {
  const Eigen::Index m = static_cast<Eigen::Index>(env.obstacles.size());
  const int horizon = static_cast<int>(x.size()) - 1;
  c.resize(m * horizon);
  if (jac) jac->setZero(m * horizon, n);
  for (int t = 1; t <= horizon; ++t) {
    const Eigen::Vector2d p = x[t].position();
    for (Eigen::Index j = 0; j < m; ++j) {
      const Eigen::Index row = (t - 1) * m + j;
      const auto& ob = env.obstacles[j];
      c(row) = obstacle_clearance(ob, p) - margin;
      if (jac)
        jac->row(row) = clearance_gradient(ob, p).transpose() * (*sens)[t].topRows<2>();
    }
  }
}

}  // namespace

NlpProblem build_kp_problem(const JointState& x0,
                            std::shared_ptr<const FollowerPredictor> predictor,
                            ObjectiveMode mode, const Environment& env,
                            const LeaderWeights& lw, double dt,
                            bool constrain_follower) {
  lw.validate();
  if (!predictor) throw PreconditionError("build_kp_problem: no predictor");
  if (!predictor->differentiable())
    throw PreconditionError("build_kp_problem: predictor '" + predictor->name() +
                            "' has no Jacobian");
  if (!env.is_safe(x0.leader.position()))
    throw PreconditionError("build_kp_problem: leader start is not strictly safe");
  const int horizon = lw.horizon;
  const Eigen::Index n = 2 * horizon;
  const Eigen::Index m = static_cast<Eigen::Index>(env.obstacles.size());
  auto ctx = std::make_shared<const KpContext>(
      KpContext{x0, predictor->lift(x0.follower), predictor, env, lw,
                active_q2(lw, mode), dt, horizon});

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
    const bool ws = grad != nullptr;
    const auto lr = shoot(ctx->x0.leader, ul, ctx->dt, 2 * horizon, 0, ws);
    const auto fr = latent_rollout(*ctx, lr, ul, ws);
    const HorizonCost hc = leader_horizon_cost(lr.x, fr.xf, ul, ctx->q2, ctx->lw,
                                               ctx->env.destination);
    if (grad) {
      grad->setZero(2 * horizon);
      for (int t = 0; t <= horizon; ++t) {
        *grad += lr.sens[t].transpose() * hc.d_xl[t];
        *grad += fr.sens[t].topRows<3>().transpose() * hc.d_xf[t];
      }
      for (int t = 0; t < horizon; ++t) grad->segment<2>(2 * t) += hc.d_ul[t];
    }
    return hc.value;
  };

  if (m > 0) {
    ConstraintBlock leader;
    leader.dim = m * horizon;
    leader.eval = [ctx](const Eigen::VectorXd& z, Eigen::VectorXd& c,
                        Eigen::MatrixXd* jac) {
      const int horizon = ctx->horizon;
      const auto ul = unpack_controls(z, 0, horizon);
      const auto lr = shoot(ctx->x0.leader, ul, ctx->dt, 2 * horizon, 0, jac != nullptr);
      std::vector<Eigen::MatrixXd> sens(lr.sens.begin(), lr.sens.end());
      clearance_block(ctx->env, lr.x, &sens, ctx->lw.clearance_margin, c, jac,
                      2 * horizon);
    };
    p.ineq_constraints.push_back(std::move(leader));

    if (constrain_follower) {
      ConstraintBlock follower;
      follower.dim = m * horizon;
      follower.eval = [ctx](const Eigen::VectorXd& z, Eigen::VectorXd& c,
                            Eigen::MatrixXd* jac) {
        const int horizon = ctx->horizon;
        const auto ul = unpack_controls(z, 0, horizon);
        const bool ws = jac != nullptr;
        const auto lr = shoot(ctx->x0.leader, ul, ctx->dt, 2 * horizon, 0, ws);
        const auto fr = latent_rollout(*ctx, lr, ul, ws);
        clearance_block(ctx->env, fr.xf, &fr.sens, 0.0, c, jac, 2 * horizon);
      };
      p.ineq_constraints.push_back(std::move(follower));
    }
  }
  return p;
}

RecedingHorizonPlanner::RecedingHorizonPlanner(
    Environment env, LeaderWeights lw,
    std::shared_ptr<const FollowerPredictor> predictor, double dt,
    SolverOptions opts, bool constrain_follower)
    : env_(std::move(env)),
      lw_(lw),
      predictor_(std::move(predictor)),
      dt_(dt),
      opts_(opts),
      constrain_follower_(constrain_follower) {
  if (!predictor_) throw PreconditionError("receding horizon planner: no predictor");
}

PlanResult RecedingHorizonPlanner::plan(const JointState& x) {
  const ObjectiveMode mode = select_objective(x.leader, x.follower, lw_.lambda);
  const NlpProblem p =
      build_kp_problem(x, predictor_, mode, env_, lw_, dt_, constrain_follower_);
  const int horizon = lw_.horizon;

  std::vector<Eigen::VectorXd> starts;
  if (warm_) starts.push_back(*warm_);
  starts.push_back(Eigen::VectorXd::Zero(p.decision_dim));
  for (auto& z : turning_starts(horizon)) starts.push_back(std::move(z));
  last_ = solve_with_restarts(p, starts, opts_);
  warm_ = shift_controls(last_.point, horizon);

  PlanResult r;
  r.leader_controls = unpack_controls(last_.point, 0, horizon);
  r.control = r.leader_controls.front();
  std::vector<LeaderInput> seq;
  RobotState xl = x.leader;
  for (const auto& u : r.leader_controls) {
    seq.push_back({xl, u});
    xl = step(xl, u, dt_);
  }
  r.predicted_follower = predict_follower(*predictor_, x.follower, seq);
  r.mode = mode;
  r.status = last_.status;
  r.flagged = !last_.converged;
  return r;
}

std::string to_string(EpisodeOutcome o) {
  switch (o) {
    case EpisodeOutcome::Reached:
      return "reached";
    case EpisodeOutcome::MaxSteps:
      return "max_steps";
    case EpisodeOutcome::Infeasible:
      return "infeasible";
  }
  return "unknown";
}

EpisodeOutcome episode_outcome_from_string(const std::string& s) {
  if (s == "reached") return EpisodeOutcome::Reached;
  if (s == "max_steps") return EpisodeOutcome::MaxSteps;
  if (s == "infeasible") return EpisodeOutcome::Infeasible;
  throw ParseError("unknown episode outcome '" + s + "'");
}

void GuidanceEpisode::check() const {
  const std::size_t s = steps();
  if (states.size() != s + 1 || follower_controls.size() != s ||
      planning_times.size() != s || modes.size() != s || flagged.size() != s)
    throw ValidationError("episode: inconsistent sequence lengths");
  for (double t : planning_times)
    if (!(t > 0.0)) throw ValidationError("episode: planning times must be positive");
}

namespace {

double goal_distance(const RobotState& xf, const Environment& env) {
  return (xf.position() - env.destination.position()).norm();
}

}  // namespace

GuidanceEpisode run_guidance(const JointState& x0, LeaderPlanner& planner,
                             const Environment& env, const FollowerWeights& fw,
                             const GridSpec& grid, double dt,
                             const GuidanceOptions& opts) {
  if (!env.is_safe(x0.leader.position()) || !env.is_safe(x0.follower.position()))
    throw PreconditionError("run_guidance: start state is not strictly safe");
  if (opts.max_steps < 0 || !(opts.reach_tol > 0.0))
    throw PreconditionError("run_guidance: invalid options");

  GuidanceEpisode e;
  e.planner = planner.name();
  e.dt = dt;
  e.states.push_back(x0);
  planner.reset();
  if (goal_distance(x0.follower, env) <= opts.reach_tol) {
    e.outcome = EpisodeOutcome::Reached;
    return e;
  }

  using Clock = std::chrono::steady_clock;
  JointState x = x0;
  for (int k = 0; k < opts.max_steps; ++k) {
    const auto t0 = Clock::now();
    const PlanResult plan = planner.plan(x);
    const auto t1 = Clock::now();
    const double elapsed = std::chrono::duration<double>(t1 - t0).count();

    RobotControl ul = clamp_control(plan.control);
    bool flag = plan.flagged;
    auto leader_ok = [&](const RobotControl& u) {
      return env.min_clearance(step(x.leader, u, dt).position()) >= -opts.feas_tol;
    };
    if (!leader_ok(ul)) {
      flag = true;
      int halvings = 0;
      while (!leader_ok(ul) && halvings < 20) {
        ul.v *= 0.5;
        ++halvings;
      }
      if (!leader_ok(ul)) ul.v = 0.0;
    }

    RobotControl uf;
    try {
      uf = best_response(x, ul, fw, env, grid, dt);
    } catch (const InfeasibleError&) {
      e.outcome = EpisodeOutcome::Infeasible;
      return e;
    }
    x = {step(x.leader, ul, dt), step(x.follower, uf, dt)};
    e.leader_controls.push_back(ul);
    e.follower_controls.push_back(uf);
    e.planning_times.push_back(std::max(elapsed, 1e-9));
    e.modes.push_back(plan.mode);
    e.flagged.push_back(flag);
    e.states.push_back(x);
    if (goal_distance(x.follower, env) <= opts.reach_tol) {
      e.outcome = EpisodeOutcome::Reached;
      return e;
    }
  }
  e.outcome = EpisodeOutcome::MaxSteps;
  return e;
}

namespace {

constexpr const char* kEpisodeFormat = "koopguide-episode";
constexpr int kEpisodeVersion = 1;

nlohmann::json state_json(const RobotState& s) { return {s.px, s.py, s.theta}; }
nlohmann::json control_json(const RobotControl& u) { return {u.v, u.omega}; }

RobotState state_from(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}
RobotControl control_from(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

ObjectiveMode mode_from(const std::string& s) {
  if (s == to_string(ObjectiveMode::ApproachFollower)) return ObjectiveMode::ApproachFollower;
  if (s == to_string(ObjectiveMode::HeadToDestination)) return ObjectiveMode::HeadToDestination;
  throw ParseError("unknown objective mode '" + s + "'");
}

}  // namespace

void save_episode(const GuidanceEpisode& e, const std::filesystem::path& path) {
  e.check();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << nlohmann::json{{"format", kEpisodeFormat},
                        {"version", kEpisodeVersion},
                        {"planner", e.planner},
                        {"outcome", to_string(e.outcome)},
                        {"steps", e.steps()},
                        {"dt", e.dt}}
             .dump()
      << '\n';
  for (std::size_t k = 0; k < e.states.size(); ++k) {
    nlohmann::json rec{{"step", k},
                       {"leader", state_json(e.states[k].leader)},
                       {"follower", state_json(e.states[k].follower)}};
    if (k < e.steps()) {
      rec["leader_control"] = control_json(e.leader_controls[k]);
      rec["follower_control"] = control_json(e.follower_controls[k]);
      rec["plan_time_s"] = e.planning_times[k];
      rec["mode"] = to_string(e.modes[k]);
      rec["flagged"] = static_cast<bool>(e.flagged[k]);
    }
    out << rec.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

GuidanceEpisode load_episode(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open episode file " + path.string());
  GuidanceEpisode e;
  std::string line;
  std::size_t lineno = 0;
  std::size_t declared = 0;
  try {
    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
    ++lineno;
    const auto h = nlohmann::json::parse(line);
    if (h.value("format", std::string()) != kEpisodeFormat)
      throw SchemaError(path.string() + ": not an episode file");
    if (h.value("version", -1) != kEpisodeVersion)
      throw SchemaError(path.string() + ": unsupported episode version");
    e.planner = h.at("planner").get<std::string>();
    e.outcome = episode_outcome_from_string(h.at("outcome").get<std::string>());
    e.dt = h.at("dt").get<double>();
    declared = h.at("steps").get<std::size_t>();
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto r = nlohmann::json::parse(line);
      e.states.push_back({state_from(r.at("leader")), state_from(r.at("follower"))});
      if (r.contains("leader_control")) {
        e.leader_controls.push_back(control_from(r.at("leader_control")));
        e.follower_controls.push_back(control_from(r.at("follower_control")));
        e.planning_times.push_back(r.at("plan_time_s").get<double>());
        e.modes.push_back(mode_from(r.at("mode").get<std::string>()));
        e.flagged.push_back(r.at("flagged").get<bool>());
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
  }
  if (e.steps() != declared)
    throw SchemaError(path.string() + ": header declares " + std::to_string(declared) +
                      " steps, found " + std::to_string(e.steps()));
  e.check();
  return e;
}

}  // namespace koopguide
