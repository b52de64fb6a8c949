#include "koopguide/config.hpp"

#include <fstream>

#include "koopguide/errors.hpp"

namespace koopguide {

namespace {

Eigen::Vector3d vec3(const nlohmann::json& j, const Eigen::Vector3d& def) {
  if (j.is_null()) return def;
  if (!j.is_array() || j.size() != 3) throw ParseError("expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Eigen::Vector2d vec2(const nlohmann::json& j, const Eigen::Vector2d& def) {
  if (j.is_null()) return def;
  if (!j.is_array() || j.size() != 2) throw ParseError("expected a 2-element array");
  return {j[0].get<double>(), j[1].get<double>()};
}

const nlohmann::json& section(const nlohmann::json& j, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  return j.contains(key) ? j.at(key) : empty;
}

nlohmann::json get(const nlohmann::json& j, const char* key) {
  return j.contains(key) ? j.at(key) : nlohmann::json();
}

}  // namespace

void ExperimentConfig::validate() const {
  koopguide::validate(env);
  leader.validate();
  follower.validate();
  grid.validate();
  train.validate();
  nn.validate();
  if (!(planner.dt > 0.0)) throw ValidationError("config: planner.dt must be > 0");
  if (!(planner.reach_tol > 0.0)) throw ValidationError("config: planner.reach_tol must be > 0");
  if (planner.max_steps < 0) throw ValidationError("config: planner.max_steps must be >= 0");
  if (dataset.n < 1 || dataset.s < 1) throw ValidationError("config: dataset n and s must be >= 1");
  if (!(dataset.train_fraction > 0.0 && dataset.train_fraction < 1.0))
    throw ValidationError("config: dataset.train_fraction must lie in (0, 1)");
  if (suite.repetitions < 0) throw ValidationError("config: suite.repetitions must be >= 0");
  if (suite.prediction_horizon < 1 || suite.prediction_trajectories < 1)
    throw ValidationError("config: prediction horizon and count must be >= 1");
  for (int n : suite.training_sizes)
    if (n < 2) throw ValidationError("config: training sizes must be >= 2");
  for (const auto& p : suite.planners)
    if (p != "foc" && p != "koopman" && p != "nn" && p != "dmd")
      throw ValidationError("config: unknown planner '" + p + "'");
  for (const auto& s : suite.starts)
    if (!env.is_safe(s.position()))
      throw ValidationError("config: start (" + std::to_string(s.px) + ", " +
                            std::to_string(s.py) + ") is not strictly safe");
}

ExperimentConfig config_from_json(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  try {
    if (!j.contains("environment"))
      throw ValidationError("config: missing 'environment' path");
    c.environment_path = j.at("environment").get<std::string>();
    if (c.environment_path.is_relative()) c.environment_path = base_dir / c.environment_path;
    if (!std::filesystem::exists(c.environment_path))
      throw ValidationError("config: environment file " + c.environment_path.string() +
                            " does not exist");
    c.env = load_environment(c.environment_path);

    const auto& l = section(j, "leader");
    c.leader.q1 = vec3(get(l, "q1"), c.leader.q1);
    c.leader.q2_near = vec3(get(l, "q2_near"), c.leader.q2_near);
    c.leader.q2_far = vec3(get(l, "q2_far"), c.leader.q2_far);
    c.leader.r = vec2(get(l, "r"), c.leader.r);
    c.leader.lambda = l.value("lambda", c.leader.lambda);
    c.leader.horizon = l.value("horizon", c.leader.horizon);
    c.leader.clearance_margin = l.value("clearance_margin", c.leader.clearance_margin);

    const auto& f = section(j, "follower");
    c.follower.q1 = vec3(get(f, "q1"), c.follower.q1);
    c.follower.q2 = vec3(get(f, "q2"), c.follower.q2);
    c.follower.q3 = f.value("q3", c.follower.q3);
    c.follower.r = vec2(get(f, "r"), c.follower.r);
    c.follower.mu = f.value("mu", c.follower.mu);

    const auto& g = section(j, "grid");
    c.grid.nv = g.value("nv", c.grid.nv);
    c.grid.nw = g.value("nw", c.grid.nw);

    const auto& p = section(j, "planner");
    c.planner.dt = p.value("dt", c.planner.dt);
    c.planner.reach_tol = p.value("reach_tol", c.planner.reach_tol);
    c.planner.max_steps = p.value("max_steps", c.planner.max_steps);
    c.planner.constrain_follower = p.value("constrain_follower", c.planner.constrain_follower);
    const auto& s = section(p, "solver");
    auto& so = c.planner.solver;
    so.feas_tol = s.value("feas_tol", so.feas_tol);
    so.opt_tol = s.value("opt_tol", so.opt_tol);
    so.initial_penalty = s.value("initial_penalty", so.initial_penalty);
    so.penalty_growth = s.value("penalty_growth", so.penalty_growth);
    so.max_penalty = s.value("max_penalty", so.max_penalty);
    so.max_outer = s.value("max_outer", so.max_outer);
    so.max_inner = s.value("max_inner", so.max_inner);
    so.lbfgs_memory = s.value("lbfgs_memory", so.lbfgs_memory);

    const auto& d = section(j, "dataset");
    c.dataset.n = d.value("n", c.dataset.n);
    c.dataset.s = d.value("s", c.dataset.s);
    c.dataset.seed = d.value("seed", c.dataset.seed);
    c.dataset.policy = leader_policy_from_string(d.value("policy", to_string(c.dataset.policy)));
    c.dataset.train_fraction = d.value("train_fraction", c.dataset.train_fraction);

    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("nn")) c.nn = nn_train_config_from_json(j.at("nn"));

    const auto& su = section(j, "suite");
    if (su.contains("training_sizes"))
      c.suite.training_sizes = su.at("training_sizes").get<std::vector<int>>();
    c.suite.repetitions = su.value("repetitions", c.suite.repetitions);
    c.suite.prediction_trajectories =
        su.value("prediction_trajectories", c.suite.prediction_trajectories);
    c.suite.prediction_horizon = su.value("prediction_horizon", c.suite.prediction_horizon);
    c.suite.full_state_error = su.value("full_state_error", c.suite.full_state_error);
    c.suite.seed = su.value("seed", c.suite.seed);
    if (su.contains("planners"))
      c.suite.planners = su.at("planners").get<std::vector<std::string>>();
    if (su.contains("starts")) {
      c.suite.starts.clear();
      for (const auto& st : su.at("starts"))
        c.suite.starts.push_back(RobotState::from(vec3(st, Eigen::Vector3d::Zero())));
    }

    const auto& m = section(j, "models");
    c.models.koopman = m.value("koopman", c.models.koopman);
    c.models.nn = m.value("nn", c.models.nn);
    c.models.dmd = m.value("dmd", c.models.dmd);

    c.output_dir = j.value("output_dir", c.output_dir.string());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config file " + path.string() + " does not exist");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

}  // namespace koopguide
