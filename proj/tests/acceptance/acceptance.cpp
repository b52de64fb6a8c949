#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "koopguide/baselines.hpp"
#include "koopguide/config.hpp"
#include "koopguide/dataset.hpp"
#include "koopguide/errors.hpp"
#include "koopguide/eval.hpp"
#include "koopguide/koopman.hpp"
#include "koopguide/model_based_planner.hpp"
#include "koopguide/rh_planner.hpp"
#include "test_util.hpp"

using namespace koopguide;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(bool pass, const std::string& name, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

JointState random_joint(std::mt19937_64& rng, const Environment& env, double spread) {
  const RobotState f = test::random_state(rng, env, 0.3);
  std::uniform_real_distribution<double> u(-spread, spread);
  for (;;) {
    RobotState l{f.px + u(rng), f.py + u(rng), f.theta + u(rng)};
    if (env.bounds.contains(l.position()) && env.min_clearance(l.position()) > 0.1) return {l, f};
  }
}

// Worst relative error of the objective gradient and every constraint block.
double problem_fd_error(const NlpProblem& p, const Eigen::VectorXd& z) {
  Eigen::VectorXd g;
  p.objective(z, &g);
  double worst = test::rel_error(g, fd_objective_gradient(p, z));
  for (const auto* blocks : {&p.eq_constraints, &p.ineq_constraints})
    for (const auto& b : *blocks) {
      Eigen::VectorXd c;
      Eigen::MatrixXd j;
      b.eval(z, c, &j);
      worst = std::max(worst, test::rel_error(j, fd_constraint_jacobian(b, z)));
    }
  return worst;
}

void gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const Environment env = test::default_env();
  const FollowerWeights fw;
  std::mt19937_64 rng(2024);

  double follower_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    const RobotState xf = test::random_state(rng, env, 0.45);
    const RobotState xl = test::random_state(rng, env);
    const RobotControl uf = test::random_control(rng);
    const RobotControl ul = test::random_control(rng);
    Eigen::Vector2d fd;
    for (int k = 0; k < 2; ++k) {
      Eigen::Vector2d e = Eigen::Vector2d::Zero();
      e(k) = 1e-6;
      fd(k) = (penalized_follower_cost(xf, RobotControl::from(uf.vec() + e), xl, ul, fw, env, 0.2) -
               penalized_follower_cost(xf, RobotControl::from(uf.vec() - e), xl, ul, fw, env, 0.2)) /
              2e-6;
    }
    follower_err = std::max(
        follower_err, test::rel_error(follower_cost_gradient(uf, xf, xl, ul, fw, env, 0.2), fd));
  }

  // Default architecture; each instance checks 64 random coordinates and one
  // random direction in both loss modes.
  double koopman_err = 0.0;
  const auto [a, b] = test::reference_system();
  std::normal_distribution<double> noise(0.0, 0.1);
  for (int i = 0; i < 100; ++i) {
    const auto data = test::linear_system_data(a, b, 2, 3, 500 + i);
    TrainConfig tc;
    tc.seed = i;
    KoopmanModel m = KoopmanModel::initialize(tc);
    Eigen::VectorXd p = flatten_parameters(m);
    for (Eigen::Index k = 0; k < p.size(); ++k) p(k) += noise(rng);
    unflatten_parameters(m, p);
    std::uniform_int_distribution<Eigen::Index> pick(0, p.size() - 1);
    for (LossMode mode : {LossMode::OneStep, LossMode::Rollout}) {
      const Eigen::VectorXd g = flatten_gradient(koopman_loss_gradient(m, data, 0.9, mode));
      KoopmanModel q = m;
      auto loss_at = [&](const Eigen::VectorXd& pp) {
        unflatten_parameters(q, pp);
        return koopman_loss(q, data, 0.9, mode);
      };
      const double h = 1e-6;
      Eigen::VectorXd analytic(65), fd(65);
      for (int s = 0; s < 64; ++s) {
        const Eigen::Index k = pick(rng);
        Eigen::VectorXd e = Eigen::VectorXd::Zero(p.size());
        e(k) = h;
        analytic(s) = g(k);
        fd(s) = (loss_at(p + e) - loss_at(p - e)) / (2 * h);
      }
      Eigen::VectorXd dir(p.size());
      for (Eigen::Index k = 0; k < p.size(); ++k) dir(k) = noise(rng);
      dir.normalize();
      analytic(64) = g.dot(dir);
      fd(64) = (loss_at(p + h * dir) - loss_at(p - h * dir)) / (2 * h);
      koopman_err = std::max(koopman_err, test::rel_error(analytic, fd));
    }
  }

  double foc_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    const JointState x = random_joint(rng, env, 1.0);
    const NlpProblem p = build_foc_problem(x, env, LeaderWeights{}, fw, 0.2,
                                           select_objective(x.leader, x.follower, 1.0));
    Eigen::VectorXd z(p.decision_dim);
    for (int t = 0; t < p.decision_dim / 2; ++t) z.segment<2>(2 * t) = test::random_control(rng).vec() * 0.3;
    try {
      foc_err = std::max(foc_err, problem_fd_error(p, z));
    } catch (const DomainError&) {
      --i;
    }
  }

  double kp_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    const JointState x = random_joint(rng, env, 1.5);
    TrainConfig tc;
    tc.seed = 1000 + i;
    auto pred = std::make_shared<KoopmanPredictor>(KoopmanModel::initialize(tc));
    const NlpProblem p = build_kp_problem(x, pred, select_objective(x.leader, x.follower, 1.0), env,
                                          LeaderWeights{}, 0.2, true);
    Eigen::VectorXd z(p.decision_dim);
    for (int t = 0; t < p.decision_dim / 2; ++t) z.segment<2>(2 * t) = test::random_control(rng).vec();
    kp_err = std::max(kp_err, problem_fd_error(p, z));
  }

  const double worst = std::max({follower_err, koopman_err, foc_err, kp_err});
  const double secs = seconds_since(t0);
  report(worst < 1e-4 && secs < 60.0, "gradient_correctness",
         "max rel err follower " + fmt(follower_err) + ", koopman " + fmt(koopman_err) + ", foc " +
             fmt(foc_err) + ", kp " + fmt(kp_err) + " (100 instances each, tol 1e-4), " +
             fmt(secs) + " s");
}

RobotControl enumerate(const JointState& x, const RobotControl& ul, const FollowerWeights& w,
                       const Environment& env, const GridSpec& grid, double dt) {
  double best = std::numeric_limits<double>::infinity();
  RobotControl arg{-1, -1};
  for (int i = 0; i < grid.nv; ++i)
    for (int k = 0; k < grid.nw; ++k) {
      const RobotControl u{grid.v_at(i), grid.omega_at(k)};
      const Eigen::Vector2d p = step(x.follower, u, dt).position();
      if (!env.bounds.contains(p) || !env.is_safe(p)) continue;
      const double c = follower_cost(x.follower, u, x.leader, ul, w, env, dt);
      if (c < best) {
        best = c;
        arg = u;
      }
    }
  return arg;
}

void oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  const Environment env = test::default_env();
  std::mt19937_64 rng(7);
  int mismatches = 0;
  const int trials = 500;
  for (int i = 0; i < trials; ++i) {
    const JointState x{test::random_state(rng, env, 0.01), test::random_state(rng, env, 0.01)};
    const RobotControl ul = test::random_control(rng);
    if (!(best_response(x, ul, FollowerWeights{}, env, GridSpec{}, 0.2) ==
          enumerate(x, ul, FollowerWeights{}, env, GridSpec{}, 0.2)))
      ++mismatches;
  }
  const auto [a, b] = test::reference_system();
  const auto data = test::linear_system_data(a, b, 50, 10, 3);
  const DmdModel m = fit_dmd(data);
  const double err = std::max((m.A - a).cwiseAbs().maxCoeff(), (m.B - b).cwiseAbs().maxCoeff());
  const double secs = seconds_since(t0);
  report(mismatches == 0 && err < 1e-8 && secs < 10.0, "oracle_equivalence",
         std::to_string(mismatches) + "/" + std::to_string(trials) +
             " best-response mismatches vs enumeration; DMD max-entry error " + fmt(err) +
             " from 500 tuples (tol 1e-8), " + fmt(secs) + " s");
}

struct Scenario {
  ExperimentConfig cfg;
  InteractionDataset train, test;
  TrainResult koopman;
  NnTrainResult nn;
  double train_seconds = 0.0;
};

void koopman_sanity(Scenario& sc) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto [a, b] = test::reference_system();
  const auto train = test::linear_system_data(a, b, 40, 10, 6);
  const auto held_out = test::linear_system_data(a, b, 10, 10, 7);
  TrainConfig lin;
  lin.embed_dim = 2;
  lin.hidden_width = 6;
  lin.hidden_layers = 2;
  lin.epochs = 400;
  lin.batch_size = 8;
  lin.learning_rate = 3e-3;
  const TrainResult lr = train_koopman(train, lin);
  double linear_err = 0.0;
  for (const auto& tr : held_out) {
    std::vector<LeaderInput> seq;
    for (int t = 0; t < 10; ++t) seq.push_back({tr.leader[t], tr.leader_controls[t]});
    const auto pred = predict_rollout(lr.model, tr.follower[0], seq);
    for (int t = 0; t < 10; ++t)
      linear_err = std::max(linear_err, (pred[t].position() - tr.follower[t + 1].position()).norm());
  }

  ExperimentConfig& cfg = sc.cfg;
  GenerationOptions g;
  g.follower_weights = cfg.follower;
  g.grid = cfg.grid;
  g.dt = cfg.planner.dt;
  const InteractionDataset d = generate_dataset(cfg.env, 500, 30, cfg.dataset.policy, cfg.dataset.seed, g);
  auto split = split_dataset(d, cfg.dataset.train_fraction, cfg.dataset.seed);
  sc.train = std::move(split.first);
  sc.test = std::move(split.second);
  TrainConfig tc = cfg.train;
  tc.epochs = 300;
  sc.koopman = train_koopman(sc.train.trajectories, tc);
  const double init = sc.koopman.curve.front();
  const double train_loss = koopman_loss(sc.koopman.model, sc.train.trajectories, tc.gamma, tc.loss_mode);
  const double test_loss = koopman_loss(sc.koopman.model, sc.test.trajectories, tc.gamma, tc.loss_mode);
  const double drop = 1.0 - train_loss / init;
  const double secs = seconds_since(t0);
  sc.train_seconds = secs;
  report(linear_err < 1e-2 && drop >= 0.5 && test_loss <= 2.0 * train_loss && secs < 900.0,
         "koopman_learning_sanity",
         "linear 10-step max error " + fmt(linear_err) + " m (tol 1e-2); N=500 S=30 300 epochs: loss " +
             fmt(init) + " -> " + fmt(train_loss) + " (drop " + fmt(100 * drop) + "%, need >= 50%), test " +
             fmt(test_loss) + " (ratio " + fmt(test_loss / train_loss) + ", need <= 2), " + fmt(secs) + " s");
}

void prediction_shape(Scenario& sc) {
  const auto t0 = std::chrono::steady_clock::now();
  sc.nn = train_one_step_nn(sc.train.trajectories, sc.cfg.nn);
  const auto train_secs = seconds_since(t0);
  const auto t1 = std::chrono::steady_clock::now();
  const KoopmanPredictor kp(sc.koopman.model);
  const NnPredictor np(sc.nn.model);
  const std::span<const Trajectory> held(sc.test.trajectories.data(), 20);
  const PredictionReport r = prediction_error({&kp, &np}, held, 10);
  const double k10 = r.errors[0].col(9).mean();
  const double n10 = r.errors[1].col(9).mean();
  int nn_better_step1 = 0;
  for (int i = 0; i < r.count; ++i) nn_better_step1 += r.errors[1](i, 0) <= r.errors[0](i, 0);
  const double secs = seconds_since(t1);
  report(k10 < n10 && 2 * nn_better_step1 >= r.count && secs < 60.0, "prediction_shape",
         "20 held-out trajectories, H=10: mean step-10 error koopman " + fmt(k10) + " m vs nn " +
             fmt(n10) + " m; nn step-1 error <= koopman in " + std::to_string(nn_better_step1) +
             "/20 (mean step-1 koopman " + fmt(r.errors[0].col(0).mean()) + ", nn " +
             fmt(r.errors[1].col(0).mean()) + "); nn training " + fmt(train_secs) + " s, evaluation " +
             fmt(secs) + " s");
}

struct Run {
  std::string planner;
  int start = 0;
  GuidanceEpisode episode;
  EpisodeSummary summary;
};

void guidance(Scenario& sc) {
  const ExperimentConfig& cfg = sc.cfg;
  LoadedModels models;
  models.koopman = sc.koopman.model;
  std::vector<Run> runs;
  const auto t0 = std::chrono::steady_clock::now();
  for (const std::string name : {"koopman", "foc"}) {
    for (std::size_t s = 0; s < cfg.suite.starts.size(); ++s) {
      auto planner = make_planner(name, cfg, models);
      GuidanceOptions go;
      go.reach_tol = cfg.planner.reach_tol;
      go.max_steps = cfg.planner.max_steps;
      go.feas_tol = cfg.planner.solver.feas_tol;
      const RobotState x0 = cfg.suite.starts[s];
      Run r{name, static_cast<int>(s), {}, {}};
      r.episode = run_guidance({x0, x0}, *planner, cfg.env, cfg.follower, cfg.grid, cfg.planner.dt, go);
      r.summary = summarize_episode(r.episode, cfg.env.destination);
      runs.push_back(std::move(r));
    }
  }
  const double secs = seconds_since(t0);

  bool all_reached = true;
  std::string detail;
  for (const auto& r : runs) {
    const bool ok = r.summary.outcome == EpisodeOutcome::Reached && r.summary.steps <= 200;
    all_reached = all_reached && ok;
    const auto& x0 = cfg.suite.starts[r.start];
    detail += r.planner + " [" + fmt(x0.px) + "," + fmt(x0.py) + "] " + to_string(r.summary.outcome) + " in " +
              std::to_string(r.summary.steps) + " steps, final " + fmt(r.summary.final_dist) + " m; ";
  }
  report(all_reached && secs < 600.0, "guidance_success", detail + fmt(secs) + " s total");

  const Run* kp = nullptr;
  const Run* foc = nullptr;
  for (const auto& r : runs)
    if (r.start == 2) (r.planner == "koopman" ? kp : foc) = &r;
  const double ratio = kp->summary.median_plan_time / foc->summary.median_plan_time;
  report(ratio <= 0.75, "planning_time",
         "[5.5,0] median per-step plan time koopman " + fmt(kp->summary.median_plan_time) + " s vs foc " +
             fmt(foc->summary.median_plan_time) + " s, ratio " + fmt(ratio) + " (need <= 0.75)");

  double leader_min = std::numeric_limits<double>::infinity();
  double follower_min = std::numeric_limits<double>::infinity();
  int episodes = 0;
  std::size_t states = 0;
  for (const auto& r : runs) {
    if (r.summary.outcome == EpisodeOutcome::Infeasible) continue;
    ++episodes;
    for (const auto& x : r.episode.states) {
      ++states;
      leader_min = std::min(leader_min, cfg.env.min_clearance(x.leader.position()));
      follower_min = std::min(follower_min, cfg.env.min_clearance(x.follower.position()));
    }
  }
  report(leader_min >= -1e-4 && follower_min > 0.0, "closed_loop_safety",
         std::to_string(episodes) + " episodes, " + std::to_string(states) + " states: min leader clearance " +
             fmt(leader_min) + " (need >= -1e-4), min follower clearance " + fmt(follower_min) +
             " (need > 0)");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_timing_key(const std::string& k) { return k.size() > 6 && k.substr(k.size() - 6) == "time_s"; }

// Blanks wall-clock fields so the remaining bytes can be compared.
std::string mask_timing(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::string out;
  const std::string ext = p.extension().string();
  std::vector<bool> timing_col;
  bool header = true;
  for (std::string line; std::getline(in, line);) {
    if (ext == ".csv") {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
      if (header) {
        for (const auto& c : cells) timing_col.push_back(is_timing_key(c));
        header = false;
      } else {
        for (std::size_t i = 0; i < cells.size() && i < timing_col.size(); ++i)
          if (timing_col[i]) cells[i] = "*";
      }
      for (const auto& c : cells) out += c + ',';
    } else if (ext == ".jsonl" || ext == ".json" || ext == ".txt") {
      try {
        auto j = nlohmann::json::parse(line);
        if (j.is_object())
          for (auto it = j.begin(); it != j.end(); ++it)
            if (is_timing_key(it.key()) || it.key() == "wall_time_s") it.value() = "*";
        out += j.dump();
      } catch (const nlohmann::json::exception&) {
        out += line;
      }
    } else {
      out += line;
    }
    out += '\n';
  }
  return out;
}

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path root = test::scratch_dir("determinism");
  std::ifstream in(test::config_dir() / "default.json");
  nlohmann::json cfg = nlohmann::json::parse(in);
  cfg["environment"] = (test::config_dir() / "env_default.json").string();
  cfg["dataset"]["n"] = 20;
  cfg["dataset"]["s"] = 10;
  cfg["train"]["epochs"] = 5;
  cfg["nn"]["epochs"] = 5;
  cfg["planner"]["max_steps"] = 8;
  cfg["suite"]["training_sizes"] = {10};
  cfg["suite"]["repetitions"] = 2;
  cfg["suite"]["prediction_trajectories"] = 4;
  std::ofstream(root / "config.json") << cfg.dump(2);

  const std::string cli = KOOPGUIDE_CLI;
  std::vector<std::string> stages = {
      "gen-data --seed 3",
      "train --method koopman --seed 3",
      "train --method nn --seed 3",
      "train --method dmd",
      "plan --planner koopman --start 5.5,0,1.57",
      "plan --planner foc --start 5.5,0,1.57",
      "eval --suite full --data {dir}/dataset.jsonl --koopman-model {dir}/koopman.json "
      "--nn-model {dir}/nn.json --dmd-model {dir}/dmd.json"};
  bool ok = true;
  std::string detail;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = root / ("run" + std::to_string(run));
    fs::create_directories(dir);
    for (std::size_t s = 0; s < stages.size(); ++s) {
      std::string args = stages[s];
      for (auto pos = args.find("{dir}"); pos != std::string::npos; pos = args.find("{dir}"))
        args.replace(pos, 5, dir.string());
      const std::string cmd = cli + " " + args.substr(0, args.find(' ')) + " --config " +
                              (root / "config.json").string() + " --out-dir " + dir.string() +
                              args.substr(args.find(' ')) + " > " + (dir / ("stage" + std::to_string(s) + ".txt")).string() +
                              " 2>&1";
      const int code = shell(cmd);
      if (code != 0) {
        ok = false;
        detail += "stage '" + stages[s] + "' exited " + std::to_string(code) + "; ";
      }
    }
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(root / "run0")) files.push_back(e.path().filename());
  std::sort(files.begin(), files.end());
  int compared = 0;
  for (const auto& f : files) {
    const fs::path a = root / "run0" / f, b = root / "run1" / f;
    if (!fs::exists(b)) {
      ok = false;
      detail += f.string() + " missing in second run; ";
      continue;
    }
    // Stage logs and reports print the output directory, which differs.
    std::string ma = mask_timing(a), mb = mask_timing(b);
    for (auto* m : {&ma, &mb})
      for (const auto& d : {(root / "run0").string(), (root / "run1").string()})
        for (auto pos = m->find(d); pos != std::string::npos; pos = m->find(d)) m->replace(pos, d.size(), "{dir}");
    ++compared;
    if (ma != mb) {
      ok = false;
      detail += f.string() + " differs; ";
    }
  }
  report(ok && compared >= 10, "determinism",
         detail + std::to_string(compared) + " artifacts from gen-data, train, plan and eval compared across two runs " +
             "(plan-time and wall-time fields masked), " + fmt(seconds_since(t0)) + " s");
}

}  // namespace

int main() {
  try {
    gradient_correctness();
    oracle_equivalence();
    Scenario sc;
    sc.cfg = test::default_config();
    koopman_sanity(sc);
    prediction_shape(sc);
    guidance(sc);
    determinism();
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
