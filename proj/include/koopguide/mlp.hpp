#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Core>

namespace koopguide {

/// Parameter gradients of an Mlp, laid out like its weights.
struct MlpGradient {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

/// Fully connected network with ReLU hidden layers and a linear output
/// layer. Samples are stored column-wise.
class Mlp {
 public:
  Mlp() = default;

  /// Weights and biases uniform in +-1/sqrt(fan_in).
  static Mlp random(const std::vector<int>& layer_sizes, std::mt19937_64& rng);
  /// All parameters zero.
  static Mlp zeros(const std::vector<int>& layer_sizes);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  int layer_count() const { return static_cast<int>(weights_.size()); }

  std::vector<Eigen::MatrixXd>& weights() { return weights_; }
  const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
  std::vector<Eigen::VectorXd>& biases() { return biases_; }
  const std::vector<Eigen::VectorXd>& biases() const { return biases_; }

  /// Activations kept for the backward pass.
  struct Tape {
    std::vector<Eigen::MatrixXd> inputs;  // input of each layer
  };

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Tape& tape) const;

  /// Accumulates parameter gradients into `grad` (which must be shaped by
  /// zero_gradient) and returns dL/dx.
  Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& d_out,
                           MlpGradient& grad) const;

  MlpGradient zero_gradient() const;

  /// d output / d input at a single sample.
  Eigen::MatrixXd input_jacobian(const Eigen::VectorXd& x) const;

  Eigen::Index parameter_count() const;
  /// Flattened as [W0 (column-major), b0, W1, b1, ...].
  void write_parameters(Eigen::Ref<Eigen::VectorXd> out) const;
  void read_parameters(const Eigen::Ref<const Eigen::VectorXd>& in);
  static void write_gradient(const MlpGradient& g,
                             Eigen::Ref<Eigen::VectorXd> out);

  bool all_finite() const;
  bool operator==(const Mlp& o) const;

 private:
  std::vector<int> sizes_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

enum class OptimizerKind { Sgd, Momentum, Adam };

/// First-order optimizer over a flat parameter vector.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, Eigen::Index n,
            double momentum = 0.9);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

 private:
  OptimizerKind kind_;
  double lr_;
  double beta1_;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
};

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

}  // namespace koopguide
