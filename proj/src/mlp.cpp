#include "koopguide/mlp.hpp"

#include <cmath>
#include <string>

#include "koopguide/errors.hpp"

namespace koopguide {

namespace {

void check_sizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw PreconditionError("mlp: need at least 2 layer sizes");
  for (int s : sizes)
    if (s <= 0) throw PreconditionError("mlp: layer sizes must be positive");
}

}  // namespace

Mlp Mlp::random(const std::vector<int>& layer_sizes, std::mt19937_64& rng) {
  Mlp m = zeros(layer_sizes);
  for (int l = 0; l < m.layer_count(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer_sizes[l]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index j = 0; j < m.weights_[l].cols(); ++j)
      for (Eigen::Index i = 0; i < m.weights_[l].rows(); ++i)
        m.weights_[l](i, j) = dist(rng);
    for (Eigen::Index i = 0; i < m.biases_[l].size(); ++i)
      m.biases_[l](i) = dist(rng);
  }
  return m;
}

Mlp Mlp::zeros(const std::vector<int>& layer_sizes) {
  check_sizes(layer_sizes);
  Mlp m;
  m.sizes_ = layer_sizes;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    m.weights_.push_back(Eigen::MatrixXd::Zero(layer_sizes[l + 1], layer_sizes[l]));
    m.biases_.push_back(Eigen::VectorXd::Zero(layer_sizes[l + 1]));
  }
  return m;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd a = x;
  for (int l = 0; l < layer_count(); ++l) {
    Eigen::MatrixXd z = weights_[l] * a;
    z.colwise() += biases_[l];
    if (l + 1 < layer_count()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Tape& tape) const {
  tape.inputs.clear();
  tape.inputs.reserve(layer_count());
  Eigen::MatrixXd a = x;
  for (int l = 0; l < layer_count(); ++l) {
    tape.inputs.push_back(a);
    Eigen::MatrixXd z = weights_[l] * a;
    z.colwise() += biases_[l];
    if (l + 1 < layer_count()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

Eigen::MatrixXd Mlp::backward(const Tape& tape, const Eigen::MatrixXd& d_out,
                              MlpGradient& grad) const {
  Eigen::MatrixXd delta = d_out;
  for (int l = layer_count() - 1; l >= 0; --l) {
    grad.weights[l].noalias() += delta * tape.inputs[l].transpose();
    grad.biases[l] += delta.rowwise().sum();
    Eigen::MatrixXd d_in = weights_[l].transpose() * delta;
    if (l > 0) {
      // inputs[l] is the ReLU output of layer l-1; its derivative is 1 where
      // the activation is positive.
      d_in = (tape.inputs[l].array() > 0.0).select(d_in, 0.0);
    }
    delta = std::move(d_in);
  }
  return delta;
}

MlpGradient Mlp::zero_gradient() const {
  MlpGradient g;
  for (int l = 0; l < layer_count(); ++l) {
    g.weights.push_back(Eigen::MatrixXd::Zero(weights_[l].rows(), weights_[l].cols()));
    g.biases.push_back(Eigen::VectorXd::Zero(biases_[l].size()));
  }
  return g;
}

Eigen::MatrixXd Mlp::input_jacobian(const Eigen::VectorXd& x) const {
  Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(x.size(), x.size());
  Eigen::VectorXd a = x;
  for (int l = 0; l < layer_count(); ++l) {
    Eigen::VectorXd z = weights_[l] * a + biases_[l];
    jac = weights_[l] * jac;
    if (l + 1 < layer_count()) {
      for (Eigen::Index i = 0; i < z.size(); ++i)
        if (!(z(i) > 0.0)) jac.row(i).setZero();
      z = z.cwiseMax(0.0);
    }
    a = std::move(z);
  }
  return jac;
}

Eigen::Index Mlp::parameter_count() const {
  Eigen::Index n = 0;
  for (int l = 0; l < layer_count(); ++l)
    n += weights_[l].size() + biases_[l].size();
  return n;
}

void Mlp::write_parameters(Eigen::Ref<Eigen::VectorXd> out) const {
  Eigen::Index k = 0;
  for (int l = 0; l < layer_count(); ++l) {
    out.segment(k, weights_[l].size()) =
        Eigen::Map<const Eigen::VectorXd>(weights_[l].data(), weights_[l].size());
    k += weights_[l].size();
    out.segment(k, biases_[l].size()) = biases_[l];
    k += biases_[l].size();
  }
}

void Mlp::read_parameters(const Eigen::Ref<const Eigen::VectorXd>& in) {
  Eigen::Index k = 0;
  for (int l = 0; l < layer_count(); ++l) {
    Eigen::Map<Eigen::VectorXd>(weights_[l].data(), weights_[l].size()) =
        in.segment(k, weights_[l].size());
    k += weights_[l].size();
    biases_[l] = in.segment(k, biases_[l].size());
    k += biases_[l].size();
  }
}

void Mlp::write_gradient(const MlpGradient& g, Eigen::Ref<Eigen::VectorXd> out) {
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    out.segment(k, g.weights[l].size()) =
        Eigen::Map<const Eigen::VectorXd>(g.weights[l].data(), g.weights[l].size());
    k += g.weights[l].size();
    out.segment(k, g.biases[l].size()) = g.biases[l];
    k += g.biases[l].size();
  }
}

bool Mlp::all_finite() const {
  for (int l = 0; l < layer_count(); ++l)
    if (!weights_[l].allFinite() || !biases_[l].allFinite()) return false;
  return true;
}

bool Mlp::operator==(const Mlp& o) const {
  if (sizes_ != o.sizes_) return false;
  for (int l = 0; l < layer_count(); ++l)
    if (weights_[l] != o.weights_[l] || biases_[l] != o.biases_[l]) return false;
  return true;
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, Eigen::Index n,
                     double momentum)
    : kind_(kind),
      lr_(learning_rate),
      beta1_(momentum),
      m_(Eigen::VectorXd::Zero(n)),
      v_(Eigen::VectorXd::Zero(n)) {
  if (!(learning_rate > 0.0))
    throw PreconditionError("optimizer: learning rate must be positive");
}

void Optimizer::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  switch (kind_) {
    case OptimizerKind::Sgd:
      params -= lr_ * grad;
      break;
    case OptimizerKind::Momentum:
      m_ = beta1_ * m_ + grad;
      params -= lr_ * m_;
      break;
    case OptimizerKind::Adam: {
      ++t_;
      m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
      v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
      params.array() -=
          lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
      break;
    }
  }
}

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Sgd:
      return "sgd";
    case OptimizerKind::Momentum:
      return "momentum";
    case OptimizerKind::Adam:
      return "adam";
  }
  return "sgd";
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "momentum") return OptimizerKind::Momentum;
  if (s == "adam") return OptimizerKind::Adam;
  throw ParseError("unknown optimizer '" + s + "' (expected sgd, momentum or adam)");
}

}  // namespace koopguide
