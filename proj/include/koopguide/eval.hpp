#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "koopguide/baselines.hpp"
#include "koopguide/config.hpp"
#include "koopguide/koopman.hpp"
#include "koopguide/predictor.hpp"
#include "koopguide/rh_planner.hpp"

namespace koopguide {

/// errors[p](i, k-1) is the error of predictor p on trajectory i at step k.
struct PredictionReport {
  std::vector<std::string> predictors;
  std::vector<Eigen::MatrixXd> errors;
  int horizon = 0;
  int count = 0;
};

/// Rolls every predictor from each trajectory's initial follower state with
/// the recorded leader inputs. Errors are position distances, or full-state
/// distances when `full_state` is set. Throws PreconditionError if a
/// trajectory is shorter than the horizon.
PredictionReport prediction_error(
    const std::vector<const FollowerPredictor*>& predictors,
    std::span<const Trajectory> truth, int horizon, bool full_state = false);

/// Partial sums of ||u^L_t||^2_R.
std::vector<double> cumulative_control_cost(const GuidanceEpisode& e,
                                            const Eigen::Vector2d& r);

struct EpisodeSummary {
  EpisodeOutcome outcome = EpisodeOutcome::MaxSteps;
  std::size_t steps = 0;
  double final_dist = 0.0;
  double median_plan_time = 0.0;
  double mean_plan_time = 0.0;
  std::size_t flagged_steps = 0;
};

EpisodeSummary summarize_episode(const GuidanceEpisode& e,
                                 const RobotState& destination);

double median(std::vector<double> v);

/// Models available to the planners; missing ones make the corresponding
/// planner unavailable.
struct LoadedModels {
  std::optional<KoopmanModel> koopman;
  std::optional<OneStepNet> nn;
  std::optional<DmdModel> dmd;
};

/// "foc", "koopman", "nn" or "dmd". Throws PreconditionError when the model
/// a planner needs is missing.
std::unique_ptr<LeaderPlanner> make_planner(const std::string& name,
                                            const ExperimentConfig& cfg,
                                            const LoadedModels& models);

enum class Suite { Training, Prediction, Guidance, Full };

std::string to_string(Suite s);
Suite suite_from_string(const std::string& s);

/// Explicit artifacts. Explicit model paths must exist; without them, models
/// are read from the output directory or trained (and saved there) from the
/// dataset.
struct SuiteInputs {
  std::optional<std::filesystem::path> dataset;
  std::optional<std::filesystem::path> koopman;
  std::optional<std::filesystem::path> nn;
  std::optional<std::filesystem::path> dmd;
};

struct SuiteReport {
  std::vector<std::filesystem::path> files;
  int failures = 0;
};

/// Writes training.csv, prediction.csv, episode.csv and summary.csv (as the
/// suite requires) into cfg.output_dir. Per-cell failures are recorded in
/// the rows and counted, not thrown.
SuiteReport run_experiment_suite(const ExperimentConfig& cfg, Suite suite,
                                 const SuiteInputs& inputs = {});

}  // namespace koopguide
