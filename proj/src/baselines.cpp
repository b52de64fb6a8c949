#include "koopguide/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/QR>

#include "koopguide/errors.hpp"
#include "koopguide/koopman.hpp"

namespace koopguide {

namespace {

const char* const kRegressorNames[8] = {"xF.px", "xF.py", "xF.theta", "xL.px",
                                        "xL.py", "xL.theta", "uL.v", "uL.omega"};

// Regressors [x^F_t; x^L_t; u^L_t] and targets x^F_{t+1}, one column per tuple.
void stack_tuples(std::span<const Trajectory> data, Eigen::MatrixXd& w,
                  Eigen::MatrixXd& next) {
  Eigen::Index n = 0;
  for (const auto& t : data) n += static_cast<Eigen::Index>(t.steps());
  w.resize(8, n);
  next.resize(3, n);
  Eigen::Index k = 0;
  for (const auto& t : data) {
    for (std::size_t s = 0; s < t.steps(); ++s, ++k) {
      w.col(k).head<3>() = t.follower[s].vec();
      w.col(k).segment<3>(3) = t.leader[s].vec();
      w.col(k).tail<2>() = t.leader_controls[s].vec();
      next.col(k) = t.follower[s + 1].vec();
    }
  }
}

}  // namespace

DmdModel fit_dmd(std::span<const Trajectory> data) {
  Eigen::MatrixXd w, next;
  stack_tuples(data, w, next);
  if (w.cols() == 0) throw PreconditionError("fit_dmd: no tuples in dataset");

  const Eigen::MatrixXd wt = w.transpose();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(wt);
  if (qr.rank() < 8) {
    std::ostringstream msg;
    msg << "fit_dmd: regressor matrix has rank " << qr.rank()
        << " < 8 (dependent columns:";
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index i = qr.rank(); i < 8; ++i) msg << ' ' << kRegressorNames[perm(i)];
    msg << ")";
    throw PreconditionError(msg.str());
  }
  const Eigen::MatrixXd theta = qr.solve(next.transpose()).transpose();  // 3 x 8

  DmdModel m;
  m.A = theta.leftCols<3>();
  m.B = theta.rightCols<5>();
  m.residual = (next - theta * w).colwise().squaredNorm().mean();
  return m;
}

RobotState dmd_step(const DmdModel& m, const RobotState& xf,
                    const RobotState& xl, const RobotControl& ul) {
  Eigen::Matrix<double, 5, 1> w;
  w << xl.vec(), ul.vec();
  return RobotState::from(m.A * xf.vec() + m.B * w);
}

double dmd_one_step_state_mse(const DmdModel& m,
                              std::span<const Trajectory> data) {
  Eigen::MatrixXd w, next;
  stack_tuples(data, w, next);
  if (w.cols() == 0) throw PreconditionError("dmd_one_step_state_mse: no tuples");
  Eigen::Matrix<double, 3, 8> theta;
  theta << m.A, m.B;
  return (next - theta * w).colwise().squaredNorm().mean();
}

void save_dmd(const DmdModel& m, const std::filesystem::path& path) {
  write_checkpoint({{"kind", "dmd"},
                    {"model",
                     {{"A", matrix_to_json(m.A)},
                      {"B", matrix_to_json(m.B)},
                      {"residual", m.residual}}}},
                   path);
}

DmdModel load_dmd(const std::filesystem::path& path) {
  const nlohmann::json j = read_checkpoint(path, "dmd");
  DmdModel m;
  try {
    m.A = matrix_from_json(j.at("A"), 3, 3, "A");
    m.B = matrix_from_json(j.at("B"), 3, 5, "B");
    m.residual = j.at("residual").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return m;
}

void NnTrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("nn config: epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("nn config: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ValidationError("nn config: learning_rate must be > 0");
  if (hidden_width < 1) throw ValidationError("nn config: hidden_width must be >= 1");
}

nlohmann::json to_json(const NnTrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed},
          {"optimizer", to_string(c.optimizer)},
          {"hidden_width", c.hidden_width}};
}

NnTrainConfig nn_train_config_from_json(const nlohmann::json& j) {
  NnTrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
    c.optimizer = optimizer_from_string(j.value("optimizer", to_string(c.optimizer)));
    c.hidden_width = j.value("hidden_width", c.hidden_width);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("nn config: ") + e.what());
  }
  c.validate();
  return c;
}

RobotState OneStepNet::step(const RobotState& xf, const RobotState& xl,
                            const RobotControl& ul) const {
  Eigen::Matrix<double, 8, 1> w;
  w << xf.vec(), xl.vec(), ul.vec();
  const Eigen::VectorXd in = (w - input_mean).cwiseQuotient(input_scale);
  return RobotState::from(net.forward(in).col(0));
}

Eigen::Matrix<double, 3, 8> OneStepNet::jacobian(const RobotState& xf,
                                                 const RobotState& xl,
                                                 const RobotControl& ul) const {
  Eigen::Matrix<double, 8, 1> w;
  w << xf.vec(), xl.vec(), ul.vec();
  const Eigen::VectorXd in = (w - input_mean).cwiseQuotient(input_scale);
  return net.input_jacobian(in) * input_scale.cwiseInverse().asDiagonal();
}

namespace {

double nn_mse(const Mlp& net, const Eigen::MatrixXd& in, const Eigen::MatrixXd& target) {
  return (net.forward(in) - target).colwise().squaredNorm().mean();
}

}  // namespace

NnTrainResult train_one_step_nn(std::span<const Trajectory> data,
                                const NnTrainConfig& cfg) {
  cfg.validate();
  Eigen::MatrixXd w, next;
  stack_tuples(data, w, next);
  if (w.cols() == 0) throw PreconditionError("train_one_step_nn: empty dataset");
  const Eigen::Index n = w.cols();

  NnTrainResult res;
  OneStepNet& m = res.model;
  m.input_mean = w.rowwise().mean();
  for (int i = 0; i < 8; ++i) {
    const double var = (w.row(i).array() - m.input_mean(i)).square().mean();
    m.input_scale(i) = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  const Eigen::MatrixXd in =
      (w.colwise() - m.input_mean).array().colwise() / m.input_scale.array();

  std::mt19937_64 rng(cfg.seed);
  m.net = Mlp::random({8, cfg.hidden_width, 3}, rng);
  Eigen::VectorXd params(m.net.parameter_count());
  m.net.write_parameters(params);
  Optimizer opt(cfg.optimizer, cfg.learning_rate, params.size());

  double best = nn_mse(m.net, in, next);
  res.curve.push_back(best);
  Eigen::VectorXd best_params = params;
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  Eigen::VectorXd flat(params.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index stop = std::min<Eigen::Index>(n, start + cfg.batch_size);
      Eigen::MatrixXd bx(8, stop - start), by(3, stop - start);
      for (Eigen::Index k = start; k < stop; ++k) {
        bx.col(k - start) = in.col(order[k]);
        by.col(k - start) = next.col(order[k]);
      }
      Mlp::Tape tape;
      const Eigen::MatrixXd out = m.net.forward(bx, tape);
      const Eigen::MatrixXd d_out = 2.0 / static_cast<double>(bx.cols()) * (out - by);
      MlpGradient g = m.net.zero_gradient();
      m.net.backward(tape, d_out, g);
      Mlp::write_gradient(g, flat);
      if (!flat.allFinite())
        throw DivergenceError("train_one_step_nn: non-finite gradient at epoch " +
                              std::to_string(epoch));
      opt.step(params, flat);
      m.net.read_parameters(params);
    }
    const double loss = nn_mse(m.net, in, next);
    if (!std::isfinite(loss))
      throw DivergenceError("train_one_step_nn: non-finite loss after epoch " +
                            std::to_string(epoch));
    res.curve.push_back(loss);
    if (loss < best) {
      best = loss;
      best_params = params;
      res.best_epoch = epoch;
    }
  }
  m.net.read_parameters(best_params);
  return res;
}

double nn_one_step_state_mse(const OneStepNet& m,
                             std::span<const Trajectory> data) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& t : data) {
    for (std::size_t s = 0; s < t.steps(); ++s, ++count) {
      const RobotState p = m.step(t.follower[s], t.leader[s], t.leader_controls[s]);
      sum += (p.vec() - t.follower[s + 1].vec()).squaredNorm();
    }
  }
  if (count == 0) throw PreconditionError("nn_one_step_state_mse: no tuples");
  return sum / static_cast<double>(count);
}

void save_nn(const OneStepNet& m, const std::filesystem::path& path) {
  write_checkpoint({{"kind", "nn"},
                    {"model",
                     {{"network", mlp_to_json(m.net)},
                      {"input_mean", matrix_to_json(m.input_mean)},
                      {"input_scale", matrix_to_json(m.input_scale)}}}},
                   path);
}

OneStepNet load_nn(const std::filesystem::path& path) {
  const nlohmann::json j = read_checkpoint(path, "nn");
  OneStepNet m;
  try {
    m.net = mlp_from_json(j.at("network"));
    m.input_mean = matrix_from_json(j.at("input_mean"), 8, 1, "input_mean");
    m.input_scale = matrix_from_json(j.at("input_scale"), 8, 1, "input_scale");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (m.net.input_dim() != 8 || m.net.output_dim() != 3)
    throw SchemaError(path.string() + ": one-step network must map 8 inputs to 3 outputs");
  return m;
}

}  // namespace koopguide
