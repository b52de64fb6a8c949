#include "koopguide/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "koopguide/errors.hpp"
#include "koopguide/model_based_planner.hpp"

namespace koopguide {

std::string to_string(LeaderPolicy p) {
  switch (p) {
    case LeaderPolicy::Random:
      return "random";
    case LeaderPolicy::Waypoint:
      return "waypoint";
    case LeaderPolicy::Mixed:
      return "mixed";
    case LeaderPolicy::Foc:
      return "foc";
  }
  return "unknown";
}

LeaderPolicy leader_policy_from_string(const std::string& s) {
  if (s == "random") return LeaderPolicy::Random;
  if (s == "waypoint") return LeaderPolicy::Waypoint;
  if (s == "mixed") return LeaderPolicy::Mixed;
  if (s == "foc") return LeaderPolicy::Foc;
  throw ValidationError("unknown leader policy '" + s +
                        "' (expected random, waypoint, mixed or foc)");
}

std::size_t InteractionDataset::tuple_count() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.steps();
  return n;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 over the pair
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Eigen::Vector2d sample_safe_point(const Environment& env, Rng& rng, int max_attempts) {
  for (int a = 0; a < max_attempts; ++a) {
    const Eigen::Vector2d p{uniform(rng, env.bounds.xmin, env.bounds.xmax),
                            uniform(rng, env.bounds.ymin, env.bounds.ymax)};
    if (env.is_safe(p)) return p;
  }
  throw InfeasibleError("dataset: no strictly safe point found after " +
                        std::to_string(max_attempts) + " attempts");
}

RobotState sample_state(const Environment& env, Rng& rng, int max_attempts) {
  const Eigen::Vector2d p = sample_safe_point(env, rng, max_attempts);
  return {p.x(), p.y(), uniform(rng, -std::numbers::pi, std::numbers::pi)};
}

bool admissible(const Environment& env, const RobotState& x) {
  return env.bounds.contains(x.position()) && env.is_safe(x.position());
}

double wrap_angle(double a) {
  return std::remainder(a, 2.0 * std::numbers::pi);
}

class LeaderDriver {
 public:
  LeaderDriver(LeaderPolicy policy, const Environment& env,
               const GenerationOptions& opts, Rng& rng)
      : policy_(policy), env_(env), opts_(opts), rng_(rng) {
    if (policy_ == LeaderPolicy::Waypoint) waypoint_ = sample_safe_point(env_, rng_, opts_.max_attempts);
    if (policy_ == LeaderPolicy::Foc)
      foc_.emplace(env_, opts_.leader_weights, opts_.follower_weights, opts_.dt);
  }

  RobotControl next(const JointState& x) {
    RobotControl u;
    switch (policy_) {
      case LeaderPolicy::Random:
        u = {uniform(rng_, kMinSpeed, kMaxSpeed), uniform(rng_, -kMaxTurnRate, kMaxTurnRate)};
        break;
      case LeaderPolicy::Waypoint: {
        Eigen::Vector2d d = waypoint_ - x.leader.position();
        if (d.norm() < 0.3) {
          waypoint_ = sample_safe_point(env_, rng_, opts_.max_attempts);
          d = waypoint_ - x.leader.position();
        }
        const double heading_err = wrap_angle(std::atan2(d.y(), d.x()) - x.leader.theta);
        u = clamp_control({1.5 * d.norm() * std::max(0.0, std::cos(heading_err)),
                           3.0 * heading_err});
        break;
      }
      case LeaderPolicy::Foc:
        u = clamp_control(foc_->plan(x).control);
        break;
      case LeaderPolicy::Mixed:
        throw PreconditionError("mixed policy must be resolved per trajectory");
    }
    if (admissible(env_, step(x.leader, u, opts_.dt))) return u;
    // Inadmissible successor: random admissible control, else stand still.
    for (int a = 0; a < 50; ++a) {
      const RobotControl r{uniform(rng_, kMinSpeed, kMaxSpeed),
                           uniform(rng_, -kMaxTurnRate, kMaxTurnRate)};
      if (admissible(env_, step(x.leader, r, opts_.dt))) return r;
    }
    return {0.0, uniform(rng_, -kMaxTurnRate, kMaxTurnRate)};
  }

 private:
  LeaderPolicy policy_;
  const Environment& env_;
  const GenerationOptions& opts_;
  Rng& rng_;
  Eigen::Vector2d waypoint_ = Eigen::Vector2d::Zero();
  std::optional<ModelBasedPlanner> foc_;
};

Trajectory generate_trajectory(const Environment& env, int s, LeaderPolicy policy,
                               std::uint64_t seed, const GenerationOptions& opts) {
  Rng rng(seed);
  if (policy == LeaderPolicy::Mixed)
    policy = std::bernoulli_distribution(0.5)(rng) ? LeaderPolicy::Random
                                                    : LeaderPolicy::Waypoint;
  JointState x{sample_state(env, rng, opts.max_attempts),
               sample_state(env, rng, opts.max_attempts)};
  LeaderDriver driver(policy, env, opts, rng);
  Trajectory t;
  t.leader.push_back(x.leader);
  t.follower.push_back(x.follower);
  for (int k = 0; k < s; ++k) {
    const RobotControl ul = driver.next(x);
    const RobotControl uf =
        best_response(x, ul, opts.follower_weights, env, opts.grid, opts.dt);
    x = {step(x.leader, ul, opts.dt), step(x.follower, uf, opts.dt)};
    t.leader_controls.push_back(ul);
    t.follower_controls.push_back(uf);
    t.leader.push_back(x.leader);
    t.follower.push_back(x.follower);
  }
  return t;
}

}  // namespace

InteractionDataset generate_dataset(const Environment& env, int n, int s,
                                    LeaderPolicy policy, std::uint64_t seed,
                                    const GenerationOptions& opts) {
  if (n < 1 || s < 1) throw PreconditionError("generate_dataset: N and S must be >= 1");
  validate(env);
  opts.follower_weights.validate();
  opts.grid.validate();

  InteractionDataset d;
  d.meta = {env, environment_hash(env), seed, policy, s, n,
            opts.follower_weights, opts.grid, opts.dt};
  d.trajectories.reserve(n);
  for (int i = 0; i < n; ++i)
    d.trajectories.push_back(generate_trajectory(env, s, policy, derive_seed(seed, i), opts));
  validate_dataset(d);
  return d;
}

namespace {

std::string where(std::size_t i, std::size_t k) {
  return "trajectory " + std::to_string(i) + ", step " + std::to_string(k);
}

bool in_box(const RobotControl& u) {
  return u.v >= kMinSpeed && u.v <= kMaxSpeed && u.omega >= -kMaxTurnRate &&
         u.omega <= kMaxTurnRate;
}

}  // namespace

void validate_dataset(const InteractionDataset& d) {
  const auto& m = d.meta;
  if (static_cast<int>(d.trajectories.size()) != m.count)
    throw ValidationError("dataset: metadata declares " + std::to_string(m.count) +
                          " trajectories, found " + std::to_string(d.trajectories.size()));
  if (m.env_hash != environment_hash(m.env))
    throw ValidationError("dataset: environment hash does not match the stored environment");
  for (std::size_t i = 0; i < d.trajectories.size(); ++i) {
    const Trajectory& t = d.trajectories[i];
    const std::size_t s = t.steps();
    if (static_cast<int>(s) != m.steps || t.leader.size() != s + 1 ||
        t.follower.size() != s + 1 || t.follower_controls.size() != s)
      throw ValidationError("dataset: trajectory " + std::to_string(i) +
                            " has inconsistent lengths");
    for (std::size_t k = 0; k <= s; ++k) {
      if (!m.env.is_safe(t.leader[k].position()) || !m.env.is_safe(t.follower[k].position()))
        throw ValidationError("dataset: unsafe state at " + where(i, k));
    }
    for (std::size_t k = 0; k < s; ++k) {
      if (!in_box(t.leader_controls[k]) || !in_box(t.follower_controls[k]))
        throw ValidationError("dataset: control outside the admissible box at " + where(i, k));
      if (step(t.leader[k], t.leader_controls[k], m.dt) != t.leader[k + 1])
        throw ValidationError("dataset: leader transition is not dynamics-consistent at " +
                              where(i, k));
      if (step(t.follower[k], t.follower_controls[k], m.dt) != t.follower[k + 1])
        throw ValidationError("dataset: follower transition is not dynamics-consistent at " +
                              where(i, k));
      RobotControl br;
      try {
        br = best_response({t.leader[k], t.follower[k]}, t.leader_controls[k],
                           m.follower_weights, m.env, m.grid, m.dt);
      } catch (const InfeasibleError&) {
        throw ValidationError("dataset: no admissible follower response at " + where(i, k));
      }
      if (br != t.follower_controls[k])
        throw ValidationError("dataset: follower control is not the best response at " +
                              where(i, k));
    }
  }
}

std::pair<InteractionDataset, InteractionDataset> split_dataset(
    const InteractionDataset& d, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw PreconditionError("split_dataset: train fraction must lie in (0, 1)");
  const std::size_t n = d.trajectories.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * n));
  if (n < 2 || n_train == 0 || n_train >= n)
    throw PreconditionError("split_dataset: " + std::to_string(n) +
                            " trajectories are too few to split");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::sort(order.begin(), order.begin() + n_train);
  std::sort(order.begin() + n_train, order.end());

  std::pair<InteractionDataset, InteractionDataset> out;
  out.first.meta = out.second.meta = d.meta;
  for (std::size_t k = 0; k < n; ++k)
    (k < n_train ? out.first : out.second).trajectories.push_back(d.trajectories[order[k]]);
  out.first.meta.count = static_cast<int>(n_train);
  out.second.meta.count = static_cast<int>(n - n_train);
  return out;
}

namespace {

constexpr const char* kDatasetFormat = "koopguide-dataset";
constexpr int kDatasetVersion = 1;

nlohmann::json states_json(const std::vector<RobotState>& xs) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& x : xs) a.push_back({x.px, x.py, x.theta});
  return a;
}

nlohmann::json controls_json(const std::vector<RobotControl>& us) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& u : us) a.push_back({u.v, u.omega});
  return a;
}

std::vector<RobotState> states_from(const nlohmann::json& a) {
  std::vector<RobotState> xs;
  for (const auto& x : a)
    xs.push_back({x.at(0).get<double>(), x.at(1).get<double>(), x.at(2).get<double>()});
  return xs;
}

std::vector<RobotControl> controls_from(const nlohmann::json& a) {
  std::vector<RobotControl> us;
  for (const auto& u : a) us.push_back({u.at(0).get<double>(), u.at(1).get<double>()});
  return us;
}

nlohmann::json weights_json(const FollowerWeights& w) {
  return {{"q1", {w.q1(0), w.q1(1), w.q1(2)}},
          {"q2", {w.q2(0), w.q2(1), w.q2(2)}},
          {"q3", w.q3},
          {"r", {w.r(0), w.r(1)}},
          {"mu", w.mu}};
}

FollowerWeights weights_from(const nlohmann::json& j) {
  FollowerWeights w;
  for (int i = 0; i < 3; ++i) {
    w.q1(i) = j.at("q1").at(i).get<double>();
    w.q2(i) = j.at("q2").at(i).get<double>();
  }
  w.q3 = j.at("q3").get<double>();
  w.r = {j.at("r").at(0).get<double>(), j.at("r").at(1).get<double>()};
  w.mu = j.at("mu").get<double>();
  return w;
}

}  // namespace

void save_dataset(const InteractionDataset& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto& m = d.meta;
  out << nlohmann::json{{"format", kDatasetFormat},
                        {"version", kDatasetVersion},
                        {"metadata",
                         {{"environment", environment_to_json(m.env)},
                          {"env_hash", m.env_hash},
                          {"seed", m.seed},
                          {"policy", to_string(m.policy)},
                          {"S", m.steps},
                          {"N", m.count},
                          {"follower_weights", weights_json(m.follower_weights)},
                          {"grid", {m.grid.nv, m.grid.nw}},
                          {"dt", m.dt}}}}
             .dump()
      << '\n';
  for (const auto& t : d.trajectories) {
    out << nlohmann::json{{"leader", states_json(t.leader)},
                          {"follower", states_json(t.follower)},
                          {"leader_controls", controls_json(t.leader_controls)},
                          {"follower_controls", controls_json(t.follower_controls)}}
               .dump()
        << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

InteractionDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset file " + path.string());
  InteractionDataset d;
  std::string line;
  std::size_t lineno = 0;
  try {
    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
    ++lineno;
    const auto h = nlohmann::json::parse(line);
    if (h.value("format", std::string()) != kDatasetFormat)
      throw SchemaError(path.string() + ": not a dataset file");
    if (h.value("version", -1) != kDatasetVersion)
      throw SchemaError(path.string() + ": unsupported dataset version " +
                        std::to_string(h.value("version", -1)) + " (expected " +
                        std::to_string(kDatasetVersion) + ")");
    const auto& m = h.at("metadata");
    d.meta.env = environment_from_json(m.at("environment"));
    d.meta.env_hash = m.at("env_hash").get<std::uint64_t>();
    d.meta.seed = m.at("seed").get<std::uint64_t>();
    d.meta.policy = leader_policy_from_string(m.at("policy").get<std::string>());
    d.meta.steps = m.at("S").get<int>();
    d.meta.count = m.at("N").get<int>();
    d.meta.follower_weights = weights_from(m.at("follower_weights"));
    d.meta.grid = {m.at("grid").at(0).get<int>(), m.at("grid").at(1).get<int>()};
    d.meta.dt = m.at("dt").get<double>();
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto r = nlohmann::json::parse(line);
      d.trajectories.push_back({states_from(r.at("leader")), states_from(r.at("follower")),
                                controls_from(r.at("leader_controls")),
                                controls_from(r.at("follower_controls"))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
  }
  validate(d.meta.env);
  d.meta.follower_weights.validate();
  d.meta.grid.validate();
  validate_dataset(d);
  return d;
}

}  // namespace koopguide
