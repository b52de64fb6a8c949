#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "koopguide/environment.hpp"
#include "koopguide/follower.hpp"
#include "koopguide/leader_cost.hpp"
#include "koopguide/nlp_solver.hpp"
#include "koopguide/planner.hpp"
#include "koopguide/predictor.hpp"

namespace koopguide {

/// Leader-only OCP with the follower replaced by a learned predictor.
/// Decision vector z = [u^L_0 .. u^L_{T-1}] (2T entries); the latent
/// follower rollout is eliminated by forward substitution.
/// Inequalities: c_j(x^L_t) >= 0 for t = 1..T (t-major), followed by the
/// same block on the predicted follower positions when
/// `constrain_follower` is set.
NlpProblem build_kp_problem(const JointState& x0,
                            std::shared_ptr<const FollowerPredictor> predictor,
                            ObjectiveMode mode, const Environment& env,
                            const LeaderWeights& lw, double dt,
                            bool constrain_follower = false);

class RecedingHorizonPlanner : public LeaderPlanner {
 public:
  RecedingHorizonPlanner(Environment env, LeaderWeights lw,
                         std::shared_ptr<const FollowerPredictor> predictor,
                         double dt, SolverOptions opts = {},
                         bool constrain_follower = false);

  std::string name() const override { return predictor_->name(); }
  PlanResult plan(const JointState& x) override;
  void reset() override { warm_.reset(); }

  const NlpSolution& last_solution() const { return last_; }

 private:
  Environment env_;
  LeaderWeights lw_;
  std::shared_ptr<const FollowerPredictor> predictor_;
  double dt_;
  SolverOptions opts_;
  bool constrain_follower_;
  std::optional<Eigen::VectorXd> warm_;
  NlpSolution last_;
};

enum class EpisodeOutcome { Reached, MaxSteps, Infeasible };

std::string to_string(EpisodeOutcome o);
EpisodeOutcome episode_outcome_from_string(const std::string& s);

struct GuidanceOptions {
  double reach_tol = 0.5;
  int max_steps = 200;
  /// Leader clearance below -feas_tol on the applied control triggers the
  /// safety fallback.
  double feas_tol = 1e-4;
};

/// Closed-loop record. Controls, times, modes and flags have one entry per
/// step; states have one more.
struct GuidanceEpisode {
  std::string planner;
  std::vector<JointState> states;
  std::vector<RobotControl> leader_controls;
  std::vector<RobotControl> follower_controls;
  std::vector<double> planning_times;  // seconds
  std::vector<ObjectiveMode> modes;
  /// Solver did not converge or the applied control was overridden.
  std::vector<bool> flagged;
  EpisodeOutcome outcome = EpisodeOutcome::MaxSteps;
  double dt = kDefaultDt;

  std::size_t steps() const { return leader_controls.size(); }
  /// Throws ValidationError if sequence lengths are inconsistent.
  void check() const;
};

/// Runs the planner against the grid best-response follower until the
/// follower is within reach_tol of the destination or max_steps elapse.
/// When the planned control would take the leader into an obstacle, the
/// speed is halved until the successor is safe (zero speed as a last
/// resort) and the step is flagged.
GuidanceEpisode run_guidance(const JointState& x0, LeaderPlanner& planner,
                             const Environment& env, const FollowerWeights& fw,
                             const GridSpec& grid, double dt,
                             const GuidanceOptions& opts = {});

/// One JSON object per line: a header, then one record per state.
void save_episode(const GuidanceEpisode& e, const std::filesystem::path& path);
GuidanceEpisode load_episode(const std::filesystem::path& path);

}  // namespace koopguide
