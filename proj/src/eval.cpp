#include "koopguide/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

#include "koopguide/dataset.hpp"
#include "koopguide/errors.hpp"
#include "koopguide/model_based_planner.hpp"

namespace koopguide {

PredictionReport prediction_error(
    const std::vector<const FollowerPredictor*>& predictors,
    std::span<const Trajectory> truth, int horizon, bool full_state) {
  if (horizon < 1) throw PreconditionError("prediction_error: horizon must be >= 1");
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (static_cast<int>(truth[i].steps()) < horizon)
      throw PreconditionError("prediction_error: horizon " + std::to_string(horizon) +
                              " exceeds the length of trajectory " + std::to_string(i));
  PredictionReport r;
  r.horizon = horizon;
  r.count = static_cast<int>(truth.size());
  for (const auto* p : predictors) {
    r.predictors.push_back(p->name());
    Eigen::MatrixXd err(r.count, horizon);
    for (int i = 0; i < r.count; ++i) {
      const Trajectory& t = truth[i];
      std::vector<LeaderInput> seq;
      for (int k = 0; k < horizon; ++k) seq.push_back({t.leader[k], t.leader_controls[k]});
      const auto pred = predict_follower(*p, t.follower[0], seq);
      for (int k = 0; k < horizon; ++k) {
        err(i, k) = full_state ? (pred[k].vec() - t.follower[k + 1].vec()).norm()
                               : (pred[k].position() - t.follower[k + 1].position()).norm();
      }
    }
    r.errors.push_back(std::move(err));
  }
  return r;
}

std::vector<double> cumulative_control_cost(const GuidanceEpisode& e,
                                            const Eigen::Vector2d& r) {
  std::vector<double> out;
  out.reserve(e.leader_controls.size());
  double acc = 0.0;
  for (const auto& u : e.leader_controls) {
    acc += r(0) * u.v * u.v + r(1) * u.omega * u.omega;
    out.push_back(acc);
  }
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

EpisodeSummary summarize_episode(const GuidanceEpisode& e,
                                 const RobotState& destination) {
  EpisodeSummary s;
  s.outcome = e.outcome;
  s.steps = e.steps();
  if (!e.states.empty())
    s.final_dist = (e.states.back().follower.position() - destination.position()).norm();
  s.median_plan_time = median(e.planning_times);
  if (!e.planning_times.empty())
    s.mean_plan_time = std::accumulate(e.planning_times.begin(), e.planning_times.end(), 0.0) /
                       static_cast<double>(e.planning_times.size());
  s.flagged_steps = static_cast<std::size_t>(std::count(e.flagged.begin(), e.flagged.end(), true));
  return s;
}

std::unique_ptr<LeaderPlanner> make_planner(const std::string& name,
                                            const ExperimentConfig& cfg,
                                            const LoadedModels& models) {
  const auto& p = cfg.planner;
  if (name == "foc")
    return std::make_unique<ModelBasedPlanner>(cfg.env, cfg.leader, cfg.follower, p.dt, p.solver);
  std::shared_ptr<const FollowerPredictor> pred;
  if (name == "koopman") {
    if (!models.koopman) throw PreconditionError("planner koopman needs a Koopman model");
    pred = std::make_shared<KoopmanPredictor>(*models.koopman);
  } else if (name == "nn") {
    if (!models.nn) throw PreconditionError("planner nn needs a one-step network");
    pred = std::make_shared<NnPredictor>(*models.nn);
  } else if (name == "dmd") {
    if (!models.dmd) throw PreconditionError("planner dmd needs a DMD model");
    pred = std::make_shared<DmdPredictor>(*models.dmd);
  } else if (name == "smooth_oracle") {
    pred = std::make_shared<SmoothFeedbackPredictor>(cfg.env, cfg.follower, cfg.grid, p.dt);
  } else {
    throw PreconditionError("unknown planner '" + name + "'");
  }
  return std::make_unique<RecedingHorizonPlanner>(cfg.env, cfg.leader, std::move(pred), p.dt,
                                                  p.solver, p.constrain_follower);
}

std::string to_string(Suite s) {
  switch (s) {
    case Suite::Training:
      return "training";
    case Suite::Prediction:
      return "prediction";
    case Suite::Guidance:
      return "guidance";
    case Suite::Full:
      return "full";
  }
  return "unknown";
}

Suite suite_from_string(const std::string& s) {
  if (s == "training") return Suite::Training;
  if (s == "prediction") return Suite::Prediction;
  if (s == "guidance") return Suite::Guidance;
  if (s == "full") return Suite::Full;
  throw ValidationError("unknown suite '" + s +
                        "' (expected training, prediction, guidance or full)");
}

namespace {

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c == '\n' ? ' ' : c;
  }
  return q + '"';
}

std::ofstream open_csv(const std::filesystem::path& path, const std::string& header) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << header << '\n';
  return out;
}

InteractionDataset suite_dataset(const ExperimentConfig& cfg, const SuiteInputs& in) {
  if (in.dataset) return load_dataset(*in.dataset);
  GenerationOptions g;
  g.follower_weights = cfg.follower;
  g.grid = cfg.grid;
  g.dt = cfg.planner.dt;
  g.leader_weights = cfg.leader;
  return generate_dataset(cfg.env, cfg.dataset.n, cfg.dataset.s, cfg.dataset.policy,
                          cfg.dataset.seed, g);
}

// Loads explicit models, then models found in the output directory, and
// trains whatever is still missing from the training split.
LoadedModels suite_models(const ExperimentConfig& cfg, const SuiteInputs& in,
                          bool need_koopman, bool need_nn, bool need_dmd) {
  LoadedModels m;
  auto check = [](const std::filesystem::path& p) {
    if (!std::filesystem::exists(p))
      throw ValidationError("model file " + p.string() + " does not exist");
    return p;
  };
  if (in.koopman) m.koopman = load_model(check(*in.koopman));
  if (in.nn) m.nn = load_nn(check(*in.nn));
  if (in.dmd) m.dmd = load_dmd(check(*in.dmd));

  const auto kp = cfg.output_dir / cfg.models.koopman;
  const auto np = cfg.output_dir / cfg.models.nn;
  const auto dp = cfg.output_dir / cfg.models.dmd;
  if (need_koopman && !m.koopman && std::filesystem::exists(kp)) m.koopman = load_model(kp);
  if (need_nn && !m.nn && std::filesystem::exists(np)) m.nn = load_nn(np);
  if (need_dmd && !m.dmd && std::filesystem::exists(dp)) m.dmd = load_dmd(dp);

  if ((need_koopman && !m.koopman) || (need_nn && !m.nn) || (need_dmd && !m.dmd)) {
    const InteractionDataset d = suite_dataset(cfg, in);
    const auto split = split_dataset(d, cfg.dataset.train_fraction, cfg.dataset.seed);
    const auto& train = split.first.trajectories;
    if (need_koopman && !m.koopman) {
      m.koopman = train_koopman(train, cfg.train).model;
      save_model(*m.koopman, kp);
    }
    if (need_nn && !m.nn) {
      m.nn = train_one_step_nn(train, cfg.nn).model;
      save_nn(*m.nn, np);
    }
    if (need_dmd && !m.dmd) {
      m.dmd = fit_dmd(train);
      save_dmd(*m.dmd, dp);
    }
  }
  return m;
}

void training_suite(const ExperimentConfig& cfg, SuiteReport& rep) {
  const auto path = cfg.output_dir / "training.csv";
  auto out = open_csv(path, "n,rep,train_loss,test_loss,wall_time_s,status");
  rep.files.push_back(path);
  GenerationOptions g;
  g.follower_weights = cfg.follower;
  g.grid = cfg.grid;
  g.dt = cfg.planner.dt;
  g.leader_weights = cfg.leader;
  std::uint64_t cell = 0;
  for (int n : cfg.suite.training_sizes) {
    for (int r = 0; r < cfg.suite.repetitions; ++r, ++cell) {
      const std::uint64_t seed = derive_seed(cfg.suite.seed, cell);
      try {
        const auto t0 = std::chrono::steady_clock::now();
        const auto d = generate_dataset(cfg.env, n, cfg.dataset.s, cfg.dataset.policy, seed, g);
        const auto split = split_dataset(d, cfg.dataset.train_fraction, seed);
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        const TrainResult res = train_koopman(split.first.trajectories, tc);
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const double train_loss =
            koopman_loss(res.model, split.first.trajectories, tc.gamma, tc.loss_mode);
        const double test_loss =
            koopman_loss(res.model, split.second.trajectories, tc.gamma, tc.loss_mode);
        out << n << ',' << r << ',' << num(train_loss) << ',' << num(test_loss) << ','
            << num(wall) << ",ok\n";
      } catch (const std::exception& e) {
        ++rep.failures;
        out << n << ',' << r << ",nan,nan,nan," << csv_field(std::string("error: ") + e.what())
            << '\n';
      }
    }
  }
}

void prediction_suite(const ExperimentConfig& cfg, const SuiteInputs& in, SuiteReport& rep) {
  const auto path = cfg.output_dir / "prediction.csv";
  auto out = open_csv(path, "predictor,traj_id,step,error_m");
  rep.files.push_back(path);
  const LoadedModels m = suite_models(cfg, in, true, true, true);
  const InteractionDataset d = suite_dataset(cfg, in);
  const auto split = split_dataset(d, cfg.dataset.train_fraction, cfg.dataset.seed);
  const auto& test = split.second.trajectories;
  const std::size_t count =
      std::min<std::size_t>(test.size(), static_cast<std::size_t>(cfg.suite.prediction_trajectories));
  const KoopmanPredictor kp(*m.koopman);
  const NnPredictor np(*m.nn);
  const DmdPredictor dp(*m.dmd);
  const PredictionReport r =
      prediction_error({&kp, &np, &dp}, std::span(test).first(count),
                       cfg.suite.prediction_horizon, cfg.suite.full_state_error);
  for (std::size_t p = 0; p < r.predictors.size(); ++p)
    for (int i = 0; i < r.count; ++i)
      for (int k = 0; k < r.horizon; ++k)
        out << r.predictors[p] << ',' << i << ',' << k + 1 << ',' << num(r.errors[p](i, k))
            << '\n';
}

void guidance_suite(const ExperimentConfig& cfg, const SuiteInputs& in, SuiteReport& rep) {
  const auto ep_path = cfg.output_dir / "episode.csv";
  const auto sum_path = cfg.output_dir / "summary.csv";
  auto ep_out = open_csv(ep_path,
                         "planner,start_id,step,px_l,py_l,px_f,py_f,plan_time_s,"
                         "cum_control_cost,mode");
  auto sum_out = open_csv(sum_path,
                          "planner,start_id,outcome,steps,final_dist_m,median_plan_time_s,"
                          "mean_plan_time_s,flagged_steps");
  rep.files.push_back(ep_path);
  rep.files.push_back(sum_path);

  const auto& planners = cfg.suite.planners;
  auto wants = [&](const char* n) {
    return std::find(planners.begin(), planners.end(), n) != planners.end();
  };
  LoadedModels models;
  std::string model_error;
  if (!cfg.suite.starts.empty() && (wants("koopman") || wants("nn") || wants("dmd"))) {
    try {
      models = suite_models(cfg, in, wants("koopman"), wants("nn"), wants("dmd"));
    } catch (const std::exception& e) {
      model_error = e.what();
    }
  }

  for (const auto& name : planners) {
    for (std::size_t sid = 0; sid < cfg.suite.starts.size(); ++sid) {
      const RobotState start = cfg.suite.starts[sid];
      try {
        if (!model_error.empty() && name != "foc") throw std::runtime_error(model_error);
        auto planner = make_planner(name, cfg, models);
        GuidanceOptions go;
        go.reach_tol = cfg.planner.reach_tol;
        go.max_steps = cfg.planner.max_steps;
        go.feas_tol = cfg.planner.solver.feas_tol;
        const GuidanceEpisode e = run_guidance({start, start}, *planner, cfg.env, cfg.follower,
                                               cfg.grid, cfg.planner.dt, go);
        save_episode(e, cfg.output_dir /
                            ("episode_" + name + "_" + std::to_string(sid) + ".jsonl"));
        const auto cost = cumulative_control_cost(e, cfg.leader.r);
        for (std::size_t k = 0; k < e.states.size(); ++k) {
          const auto& x = e.states[k];
          ep_out << name << ',' << sid << ',' << k << ',' << num(x.leader.px) << ','
                 << num(x.leader.py) << ',' << num(x.follower.px) << ',' << num(x.follower.py)
                 << ',';
          if (k < e.steps())
            ep_out << num(e.planning_times[k]) << ',' << num(k == 0 ? 0.0 : cost[k - 1]) << ','
                   << to_string(e.modes[k]);
          else
            ep_out << ',' << num(cost.empty() ? 0.0 : cost.back()) << ',';
          ep_out << '\n';
        }
        const EpisodeSummary s = summarize_episode(e, cfg.env.destination);
        sum_out << name << ',' << sid << ',' << to_string(s.outcome) << ',' << s.steps << ','
                << num(s.final_dist) << ',' << num(s.median_plan_time) << ','
                << num(s.mean_plan_time) << ',' << s.flagged_steps << '\n';
      } catch (const std::exception& ex) {
        ++rep.failures;
        sum_out << name << ',' << sid << ',' << csv_field(std::string("error: ") + ex.what())
                << ",0,nan,nan,nan,0\n";
      }
    }
  }
}

}  // namespace

SuiteReport run_experiment_suite(const ExperimentConfig& cfg, Suite suite,
                                 const SuiteInputs& inputs) {
  std::filesystem::create_directories(cfg.output_dir);
  SuiteReport rep;
  if (suite == Suite::Training || suite == Suite::Full) training_suite(cfg, rep);
  if (suite == Suite::Prediction || suite == Suite::Full) prediction_suite(cfg, inputs, rep);
  if (suite == Suite::Guidance || suite == Suite::Full) guidance_suite(cfg, inputs, rep);
  return rep;
}

}  // namespace koopguide
