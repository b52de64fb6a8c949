#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "koopguide/mlp.hpp"
#include "koopguide/trajectory.hpp"

namespace koopguide {

/// x^F_{t+1} = A x^F_t + B [x^L_t; u^L_t].
struct DmdModel {
  Eigen::Matrix3d A = Eigen::Matrix3d::Identity();
  Eigen::Matrix<double, 3, 5> B = Eigen::Matrix<double, 3, 5>::Zero();
  /// Mean squared one-step state residual on the fitting data.
  double residual = 0.0;

  bool operator==(const DmdModel& o) const { return A == o.A && B == o.B; }
};

/// Least-squares fit over every tuple of every trajectory. Throws
/// PreconditionError when the 8-column regressor is rank deficient; the
/// message names the dependent regressor columns.
DmdModel fit_dmd(std::span<const Trajectory> data);

RobotState dmd_step(const DmdModel& m, const RobotState& xf,
                    const RobotState& xl, const RobotControl& ul);

double dmd_one_step_state_mse(const DmdModel& m,
                              std::span<const Trajectory> data);

void save_dmd(const DmdModel& m, const std::filesystem::path& path);
DmdModel load_dmd(const std::filesystem::path& path);

struct NnTrainConfig {
  int epochs = 300;
  int batch_size = 64;  // tuples
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  int hidden_width = 64;

  void validate() const;
};

nlohmann::json to_json(const NnTrainConfig& c);
NnTrainConfig nn_train_config_from_json(const nlohmann::json& j);

/// One-step network on inputs w = [x^F; x^L; u^L], standardized with
/// statistics frozen at training time: x^F_{t+1} = net((w - mean) / scale).
struct OneStepNet {
  Mlp net;
  Eigen::Matrix<double, 8, 1> input_mean = Eigen::Matrix<double, 8, 1>::Zero();
  Eigen::Matrix<double, 8, 1> input_scale = Eigen::Matrix<double, 8, 1>::Ones();

  RobotState step(const RobotState& xf, const RobotState& xl,
                  const RobotControl& ul) const;
  /// d x^F_{t+1} / d [x^F; x^L; u^L].
  Eigen::Matrix<double, 3, 8> jacobian(const RobotState& xf,
                                       const RobotState& xl,
                                       const RobotControl& ul) const;
  bool operator==(const OneStepNet& o) const {
    return net == o.net && input_mean == o.input_mean &&
           input_scale == o.input_scale;
  }
};

struct NnTrainResult {
  OneStepNet model;
  std::vector<double> curve;  // full-data MSE, index 0 = initialization
  int best_epoch = 0;
};

NnTrainResult train_one_step_nn(std::span<const Trajectory> data,
                                const NnTrainConfig& cfg);

double nn_one_step_state_mse(const OneStepNet& m,
                             std::span<const Trajectory> data);

void save_nn(const OneStepNet& m, const std::filesystem::path& path);
OneStepNet load_nn(const std::filesystem::path& path);

}  // namespace koopguide
