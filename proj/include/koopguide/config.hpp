#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "koopguide/baselines.hpp"
#include "koopguide/dataset.hpp"
#include "koopguide/environment.hpp"
#include "koopguide/follower.hpp"
#include "koopguide/koopman.hpp"
#include "koopguide/leader_cost.hpp"
#include "koopguide/nlp_solver.hpp"

namespace koopguide {

struct PlannerConfig {
  double dt = kDefaultDt;
  double reach_tol = 0.5;
  int max_steps = 200;
  bool constrain_follower = false;
  SolverOptions solver;
};

struct DatasetConfig {
  int n = 2500;
  int s = 30;
  std::uint64_t seed = 0;
  LeaderPolicy policy = LeaderPolicy::Mixed;
  double train_fraction = 0.8;
};

struct SuiteConfig {
  std::vector<int> training_sizes{2500, 5000, 7500, 10000};
  int repetitions = 10;
  int prediction_trajectories = 20;
  int prediction_horizon = 10;
  bool full_state_error = false;
  /// Follower starts; the leader starts at the same pose.
  std::vector<RobotState> starts{{0.0, 8.5, 0.0}, {0.5, 3.0, 0.785}, {5.5, 0.0, 1.57}};
  std::vector<std::string> planners{"foc", "koopman", "nn", "dmd"};
  std::uint64_t seed = 0;
};

/// File names of trained models, resolved against the output directory.
struct ModelPaths {
  std::string koopman = "koopman.json";
  std::string nn = "nn.json";
  std::string dmd = "dmd.json";
};

struct ExperimentConfig {
  std::filesystem::path environment_path;
  Environment env;
  LeaderWeights leader;
  FollowerWeights follower;
  GridSpec grid;
  PlannerConfig planner;
  DatasetConfig dataset;
  TrainConfig train;
  NnTrainConfig nn;
  SuiteConfig suite;
  ModelPaths models;
  std::filesystem::path output_dir = "out";

  /// Throws ValidationError on any violated invariant.
  void validate() const;
};

/// Reads a config file. Relative environment paths are resolved against the
/// config file's directory; the environment is loaded and validated.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig config_from_json(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir);

}  // namespace koopguide
