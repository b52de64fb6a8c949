#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "koopguide/baselines.hpp"
#include "koopguide/config.hpp"
#include "koopguide/dataset.hpp"
#include "koopguide/errors.hpp"
#include "koopguide/eval.hpp"
#include "koopguide/koopman.hpp"
#include "koopguide/rh_planner.hpp"

namespace fs = std::filesystem;
using namespace koopguide;

namespace {

enum Exit { kOk = 0, kUsage = 1, kValidation = 2, kRuntime = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int fail(int code, const std::string& kind, const std::string& msg) {
  std::cerr << nlohmann::json{{"error", kind}, {"exit_code", code}, {"message", msg}}.dump()
            << '\n';
  return code;
}

struct Common {
  std::string config = KOOPGUIDE_DEFAULT_CONFIG;
  std::string out_dir;
  std::string env;
};

ExperimentConfig resolve_config(const Common& c) {
  nlohmann::json j;
  fs::path base;
  std::ifstream in(c.config);
  if (in) {
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(c.config + ": " + e.what());
    }
    base = fs::path(c.config).parent_path();
  } else if (c.env.empty()) {
    throw UsageError("no config file at " + c.config + " and no --env given");
  } else {
    j = nlohmann::json::object();
  }
  if (!c.env.empty()) j["environment"] = fs::absolute(c.env).string();
  if (!j.contains("environment")) throw UsageError("no environment: pass --env");
  ExperimentConfig cfg = config_from_json(j, base);
  if (const char* o = std::getenv("KOOPGUIDE_OUT"); o && *o) cfg.output_dir = o;
  if (!c.out_dir.empty()) cfg.output_dir = c.out_dir;
  fs::create_directories(cfg.output_dir);
  return cfg;
}

RobotState parse_pose(const std::string& s, const char* flag) {
  std::stringstream ss(s);
  std::string part;
  std::vector<double> v;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw UsageError(std::string(flag) + ": '" + s + "' is not of the form x,y[,theta]");
    }
  }
  if (v.size() == 2) v.push_back(0.0);
  if (v.size() != 3) throw UsageError(std::string(flag) + ": expected x,y[,theta]");
  return {v[0], v[1], v[2]};
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Experiment config file")->capture_default_str();
  app->add_option("--out-dir", c.out_dir,
                  "Output directory (overrides the config and $KOOPGUIDE_OUT)");
  app->add_option("--env", c.env, "Environment file (overrides the config)");
}

struct GenArgs {
  std::optional<int> n, s;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> policy;
  std::string out;
};

int cmd_gen_data(const Common& c, const GenArgs& a) {
  const ExperimentConfig cfg = resolve_config(c);
  GenerationOptions g;
  g.follower_weights = cfg.follower;
  g.grid = cfg.grid;
  g.dt = cfg.planner.dt;
  g.leader_weights = cfg.leader;
  const int n = a.n.value_or(cfg.dataset.n);
  const int s = a.s.value_or(cfg.dataset.s);
  if (n < 1 || s < 1) throw ValidationError("--n and --s must be >= 1");
  const LeaderPolicy policy =
      a.policy ? leader_policy_from_string(*a.policy) : cfg.dataset.policy;
  const auto d = generate_dataset(cfg.env, n, s, policy, a.seed.value_or(cfg.dataset.seed), g);
  const fs::path out = a.out.empty() ? cfg.output_dir / "dataset.jsonl" : fs::path(a.out);
  save_dataset(d, out);
  std::cout << nlohmann::json{{"dataset", out.string()},
                              {"trajectories", d.trajectories.size()},
                              {"tuples", d.tuple_count()}}
                   .dump()
            << '\n';
  return kOk;
}

struct TrainArgs {
  std::string method = "koopman";
  std::string data;
  std::string out;
  std::optional<int> epochs, batch, embed_dim;
  std::optional<double> lr, gamma;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> optimizer, loss_mode;
};

int cmd_train(const Common& c, const TrainArgs& a) {
  const ExperimentConfig cfg = resolve_config(c);
  const fs::path data = a.data.empty() ? cfg.output_dir / "dataset.jsonl" : fs::path(a.data);
  if (!fs::exists(data)) throw ValidationError("dataset file " + data.string() + " does not exist");
  const InteractionDataset d = load_dataset(data);
  const auto split = split_dataset(d, cfg.dataset.train_fraction, cfg.dataset.seed);
  const auto& train = split.first.trajectories;
  const auto& test = split.second.trajectories;

  nlohmann::json report{{"method", a.method}};
  fs::path out;
  if (a.method == "koopman") {
    TrainConfig tc = cfg.train;
    if (a.epochs) tc.epochs = *a.epochs;
    if (a.batch) tc.batch_size = *a.batch;
    if (a.embed_dim) tc.embed_dim = *a.embed_dim;
    if (a.lr) tc.learning_rate = *a.lr;
    if (a.gamma) tc.gamma = *a.gamma;
    if (a.seed) tc.seed = *a.seed;
    if (a.optimizer) tc.optimizer = optimizer_from_string(*a.optimizer);
    if (a.loss_mode) tc.loss_mode = loss_mode_from_string(*a.loss_mode);
    const TrainResult r = train_koopman(train, tc);
    out = a.out.empty() ? cfg.output_dir / cfg.models.koopman : fs::path(a.out);
    save_model(r.model, out);
    const fs::path curve = cfg.output_dir / "training_curve_koopman.csv";
    std::ofstream cv(curve);
    cv << "epoch,train_loss\n";
    for (std::size_t e = 0; e < r.curve.size(); ++e) cv << e << ',' << r.curve[e] << '\n';
    report["train_loss"] = koopman_loss(r.model, train, tc.gamma, tc.loss_mode);
    report["test_loss"] = koopman_loss(r.model, test, tc.gamma, tc.loss_mode);
    report["best_epoch"] = r.best_epoch;
    report["curve"] = curve.string();
  } else if (a.method == "nn") {
    NnTrainConfig nc = cfg.nn;
    if (a.epochs) nc.epochs = *a.epochs;
    if (a.batch) nc.batch_size = *a.batch;
    if (a.lr) nc.learning_rate = *a.lr;
    if (a.seed) nc.seed = *a.seed;
    if (a.optimizer) nc.optimizer = optimizer_from_string(*a.optimizer);
    const NnTrainResult r = train_one_step_nn(train, nc);
    out = a.out.empty() ? cfg.output_dir / cfg.models.nn : fs::path(a.out);
    save_nn(r.model, out);
    const fs::path curve = cfg.output_dir / "training_curve_nn.csv";
    std::ofstream cv(curve);
    cv << "epoch,train_mse\n";
    for (std::size_t e = 0; e < r.curve.size(); ++e) cv << e << ',' << r.curve[e] << '\n';
    report["train_mse"] = nn_one_step_state_mse(r.model, train);
    report["test_mse"] = nn_one_step_state_mse(r.model, test);
    report["curve"] = curve.string();
  } else {
    const DmdModel m = fit_dmd(train);
    out = a.out.empty() ? cfg.output_dir / cfg.models.dmd : fs::path(a.out);
    save_dmd(m, out);
    report["train_mse"] = m.residual;
    report["test_mse"] = dmd_one_step_state_mse(m, test);
  }
  report["model"] = out.string();
  std::cout << report.dump() << '\n';
  return kOk;
}

struct PlanArgs {
  std::string planner = "koopman";
  std::string model;
  std::string start = "5.5,0,1.57";
  std::string leader_start;
  std::optional<int> max_steps;
  std::string out;
};

int cmd_plan(const Common& c, const PlanArgs& a) {
  ExperimentConfig cfg = resolve_config(c);
  if (a.max_steps) cfg.planner.max_steps = *a.max_steps;
  const RobotState xf = parse_pose(a.start, "--start");
  const RobotState xl = a.leader_start.empty() ? xf : parse_pose(a.leader_start, "--leader-start");
  for (const auto* s : {&xf, &xl})
    if (!cfg.env.is_safe(s->position()))
      throw ValidationError("start (" + std::to_string(s->px) + ", " + std::to_string(s->py) +
                            ") is not strictly safe");

  LoadedModels models;
  auto model_path = [&](const std::string& def) {
    const fs::path p = a.model.empty() ? cfg.output_dir / def : fs::path(a.model);
    if (!fs::exists(p)) throw ValidationError("model file " + p.string() + " does not exist");
    return p;
  };
  if (a.planner == "koopman") models.koopman = load_model(model_path(cfg.models.koopman));
  if (a.planner == "nn") models.nn = load_nn(model_path(cfg.models.nn));
  if (a.planner == "dmd") models.dmd = load_dmd(model_path(cfg.models.dmd));

  auto planner = make_planner(a.planner, cfg, models);
  GuidanceOptions go;
  go.reach_tol = cfg.planner.reach_tol;
  go.max_steps = cfg.planner.max_steps;
  go.feas_tol = cfg.planner.solver.feas_tol;
  const GuidanceEpisode e =
      run_guidance({xl, xf}, *planner, cfg.env, cfg.follower, cfg.grid, cfg.planner.dt, go);
  const fs::path out =
      a.out.empty() ? cfg.output_dir / ("episode_" + a.planner + ".jsonl") : fs::path(a.out);
  save_episode(e, out);
  const EpisodeSummary s = summarize_episode(e, cfg.env.destination);
  std::cout << nlohmann::json{{"planner", a.planner},
                              {"outcome", to_string(s.outcome)},
                              {"steps", s.steps},
                              {"final_dist_m", s.final_dist},
                              {"median_plan_time_s", s.median_plan_time},
                              {"flagged_steps", s.flagged_steps},
                              {"episode", out.string()}}
                   .dump()
            << '\n';
  return kOk;
}

struct EvalArgs {
  std::string suite = "full";
  std::string data, koopman, nn, dmd;
};

int cmd_eval(const Common& c, const EvalArgs& a) {
  const ExperimentConfig cfg = resolve_config(c);
  SuiteInputs in;
  auto opt = [](const std::string& s, const char* what) -> std::optional<fs::path> {
    if (s.empty()) return std::nullopt;
    if (!fs::exists(s)) throw ValidationError(std::string(what) + " " + s + " does not exist");
    return fs::path(s);
  };
  in.dataset = opt(a.data, "dataset file");
  in.koopman = opt(a.koopman, "model file");
  in.nn = opt(a.nn, "model file");
  in.dmd = opt(a.dmd, "model file");
  const SuiteReport r = run_experiment_suite(cfg, suite_from_string(a.suite), in);
  nlohmann::json files = nlohmann::json::array();
  for (const auto& f : r.files) files.push_back(f.string());
  std::cout << nlohmann::json{{"suite", a.suite}, {"files", files}, {"failures", r.failures}}.dump()
            << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Strategic leader-follower guidance with learned Koopman models"};
  app.require_subcommand(1);
  Common common;

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate an interaction dataset");
  add_common(g, common);
  g->add_option("--n", gen.n, "Number of trajectories (config default 2500)");
  g->add_option("--s", gen.s, "Steps per trajectory (config default 30)");
  g->add_option("--seed", gen.seed, "Random seed (config default 0)");
  g->add_option("--policy", gen.policy, "Leader policy: random, waypoint, mixed or foc (config default mixed)")
      ->check(CLI::IsMember({"random", "waypoint", "mixed", "foc"}));
  g->add_option("--out", gen.out, "Dataset file (default <out-dir>/dataset.jsonl)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a follower model");
  add_common(t, common);
  t->add_option("--method", tr.method, "koopman, nn or dmd")
      ->check(CLI::IsMember({"koopman", "nn", "dmd"}))
      ->capture_default_str();
  t->add_option("--data", tr.data, "Dataset file (default <out-dir>/dataset.jsonl)");
  t->add_option("--out", tr.out, "Checkpoint file (default <out-dir>/<method>.json)");
  t->add_option("--epochs", tr.epochs, "Training epochs (config default 1000 koopman, 300 nn)");
  t->add_option("--batch", tr.batch, "Batch size (config default 32 trajectories / 64 tuples)");
  t->add_option("--lr", tr.lr, "Learning rate (config default 1e-3)");
  t->add_option("--gamma", tr.gamma, "Step decay of the Koopman loss (config default 0.9)");
  t->add_option("--embed-dim", tr.embed_dim, "Embedding width q_h (config default 20)");
  t->add_option("--seed", tr.seed, "Training seed (config default 0)");
  t->add_option("--optimizer", tr.optimizer, "sgd, momentum or adam (config default adam)")
      ->check(CLI::IsMember({"sgd", "momentum", "adam"}));
  t->add_option("--loss-mode", tr.loss_mode, "one_step or rollout (config default one_step)")
      ->check(CLI::IsMember({"one_step", "rollout"}));

  PlanArgs pl;
  auto* p = app.add_subcommand("plan", "Run one guidance episode");
  add_common(p, common);
  p->add_option("--planner", pl.planner, "foc, koopman, nn or dmd")
      ->check(CLI::IsMember({"foc", "koopman", "nn", "dmd"}))
      ->capture_default_str();
  p->add_option("--model", pl.model, "Checkpoint (default <out-dir>/<planner>.json)");
  p->add_option("--start", pl.start, "Follower start x,y[,theta]")->capture_default_str();
  p->add_option("--leader-start", pl.leader_start, "Leader start x,y[,theta] (default: --start)");
  p->add_option("--max-steps", pl.max_steps, "Step limit (config default 200)");
  p->add_option("--out", pl.out, "Episode file (default <out-dir>/episode_<planner>.jsonl)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Run an experiment suite and write CSV metrics");
  add_common(e, common);
  e->add_option("--suite", ev.suite, "training, prediction, guidance or full")
      ->check(CLI::IsMember({"training", "prediction", "guidance", "full"}))
      ->capture_default_str();
  e->add_option("--data", ev.data, "Dataset file (default: generated from the config)");
  e->add_option("--koopman-model", ev.koopman, "Koopman checkpoint");
  e->add_option("--nn-model", ev.nn, "One-step network checkpoint");
  e->add_option("--dmd-model", ev.dmd, "DMD checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    if (ex.get_exit_code() == 0) return app.exit(ex);
    return fail(kUsage, "usage", ex.what());
  }

  try {
    if (g->parsed()) return cmd_gen_data(common, gen);
    if (t->parsed()) return cmd_train(common, tr);
    if (p->parsed()) return cmd_plan(common, pl);
    if (e->parsed()) return cmd_eval(common, ev);
  } catch (const UsageError& ex) {
    return fail(kUsage, "usage", ex.what());
  } catch (const ValidationError& ex) {
    return fail(kValidation, "validation", ex.what());
  } catch (const ParseError& ex) {
    return fail(kValidation, "parse", ex.what());
  } catch (const SchemaError& ex) {
    return fail(kValidation, "schema", ex.what());
  } catch (const PreconditionError& ex) {
    return fail(kValidation, "precondition", ex.what());
  } catch (const std::exception& ex) {
    return fail(kRuntime, "runtime", ex.what());
  }
  return kUsage;
}
