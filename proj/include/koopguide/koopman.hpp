#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "koopguide/dynamics.hpp"
#include "koopguide/mlp.hpp"
#include "koopguide/trajectory.hpp"

namespace koopguide {

inline constexpr int kStateDim = 3;
inline constexpr int kLeaderInputDim = 5;

/// Which residuals enter the training objective.
///  OneStep: g(x_{t+1}) - A g(x_t) - B w_t for every tuple.
///  Rollout: g(x_{t+1}) - y_{t+1} with y lifted once at t = 0 and propagated
///           linearly.
enum class LossMode { OneStep, Rollout };

std::string to_string(LossMode m);
LossMode loss_mode_from_string(const std::string& s);

struct TrainConfig {
  double gamma = 0.9;
  int epochs = 1000;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  LossMode loss_mode = LossMode::OneStep;
  int embed_dim = 20;     // q_h
  int hidden_width = 90;
  int hidden_layers = 3;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Lifted linear model of the follower feedback dynamics:
///   y = [x; h(x)],  y' = A y + B1 x^L + B2 u^L,  x = C y with C = [I 0].
struct KoopmanModel {
  Mlp embedding;  // h: R^3 -> R^{q_h}
  Eigen::MatrixXd A;
  Eigen::MatrixXd B1;
  Eigen::MatrixXd B2;
  TrainConfig config;

  int embed_dim() const { return embedding.output_dim(); }
  int lifted_dim() const { return kStateDim + embed_dim(); }
  /// The fixed decoder [I_3 0].
  Eigen::MatrixXd C() const;

  /// A = identity on the state block and small uniform noise elsewhere,
  /// B small uniform noise, embedding fan-in scaled.
  static KoopmanModel initialize(const TrainConfig& cfg);

  /// Throws SchemaError on inconsistent dimensions.
  void check_dimensions() const;
  bool operator==(const KoopmanModel& o) const;
};

/// g_x(x) = [x; h(x)].
Eigen::VectorXd embed(const KoopmanModel& m, const RobotState& xf);

/// (1/N) sum_i sum_t gamma^t ||residual_{i,t}||^2 over t = 0..S-1.
double koopman_loss(const KoopmanModel& m, std::span<const Trajectory> batch,
                    double gamma, LossMode mode = LossMode::OneStep);

struct KoopmanGradient {
  double loss = 0.0;
  MlpGradient embedding;
  Eigen::MatrixXd A;
  Eigen::MatrixXd B1;
  Eigen::MatrixXd B2;
};

KoopmanGradient koopman_loss_gradient(const KoopmanModel& m,
                                      std::span<const Trajectory> batch,
                                      double gamma,
                                      LossMode mode = LossMode::OneStep);

/// Flat views used by the optimizer and by finite-difference checks:
/// [embedding parameters, A (column-major), B1, B2].
Eigen::VectorXd flatten_parameters(const KoopmanModel& m);
void unflatten_parameters(KoopmanModel& m, const Eigen::VectorXd& p);
Eigen::VectorXd flatten_gradient(const KoopmanGradient& g);

struct TrainResult {
  KoopmanModel model;
  /// Full training-set loss at initialization (index 0) and after each epoch.
  std::vector<double> curve;
  int best_epoch = 0;
};

/// Mini-batch training over trajectories. Deterministic for a fixed seed.
/// Returns the parameters with the lowest full training loss seen, so the
/// result never has a higher training loss than the initialization.
TrainResult train_koopman(std::span<const Trajectory> data,
                          const TrainConfig& cfg);

/// y_0 = embed(xf0); y_{t+1} = A y_t + B1 x^L_t + B2 u^L_t; returns C y_t for
/// t = 1..len(leader_seq).
std::vector<RobotState> predict_rollout(const KoopmanModel& m,
                                        const RobotState& xf0,
                                        std::span<const LeaderInput> leader_seq);

/// Mean over tuples of ||x_{t+1} - C(A g(x_t) + B w_t)||^2.
double koopman_one_step_state_mse(const KoopmanModel& m,
                                  std::span<const Trajectory> data);

nlohmann::json to_json(const KoopmanModel& m);
KoopmanModel koopman_model_from_json(const nlohmann::json& j);
void save_model(const KoopmanModel& m, const std::filesystem::path& path);
KoopmanModel load_model(const std::filesystem::path& path);

/// Shared helpers for the checkpoint container.
nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index rows,
                                 Eigen::Index cols, const std::string& what);
nlohmann::json mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);
nlohmann::json read_checkpoint(const std::filesystem::path& path,
                               const std::string& kind);
void write_checkpoint(const nlohmann::json& body,
                      const std::filesystem::path& path);

}  // namespace koopguide
