#include "koopguide/koopman.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "koopguide/errors.hpp"

namespace koopguide {

std::string to_string(LossMode m) {
  return m == LossMode::OneStep ? "one_step" : "rollout";
}

LossMode loss_mode_from_string(const std::string& s) {
  if (s == "one_step") return LossMode::OneStep;
  if (s == "rollout") return LossMode::Rollout;
  throw ParseError("unknown loss mode '" + s + "' (expected one_step or rollout)");
}

void TrainConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw ValidationError("train config: gamma must lie in (0, 1]");
  if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
  if (!(learning_rate > 0.0))
    throw ValidationError("train config: learning_rate must be > 0");
  if (embed_dim < 1 || hidden_width < 1 || hidden_layers < 0)
    throw ValidationError("train config: invalid network dimensions");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"gamma", c.gamma},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed},
          {"optimizer", to_string(c.optimizer)},
          {"loss_mode", to_string(c.loss_mode)},
          {"embed_dim", c.embed_dim},
          {"hidden_width", c.hidden_width},
          {"hidden_layers", c.hidden_layers}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.gamma = j.value("gamma", c.gamma);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
    c.optimizer = optimizer_from_string(j.value("optimizer", to_string(c.optimizer)));
    c.loss_mode = loss_mode_from_string(j.value("loss_mode", to_string(c.loss_mode)));
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.hidden_width = j.value("hidden_width", c.hidden_width);
    c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

Eigen::MatrixXd KoopmanModel::C() const {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(kStateDim, lifted_dim());
  c.leftCols(kStateDim).setIdentity();
  return c;
}

KoopmanModel KoopmanModel::initialize(const TrainConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::vector<int> sizes{kStateDim};
  for (int l = 0; l < cfg.hidden_layers; ++l) sizes.push_back(cfg.hidden_width);
  sizes.push_back(cfg.embed_dim);

  KoopmanModel m;
  m.config = cfg;
  m.embedding = Mlp::random(sizes, rng);
  const int d = m.lifted_dim();
  std::uniform_real_distribution<double> small(-0.01, 0.01);
  auto fill = [&](Eigen::MatrixXd& mat, Eigen::Index r, Eigen::Index c) {
    mat.resize(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) mat(i, j) = small(rng);
  };
  fill(m.A, d, d);
  m.A.topLeftCorner(kStateDim, kStateDim).setIdentity();
  fill(m.B1, d, kStateDim);
  fill(m.B2, d, 2);
  return m;
}

void KoopmanModel::check_dimensions() const {
  const int d = lifted_dim();
  if (embedding.layer_count() == 0 || embedding.input_dim() != kStateDim)
    throw SchemaError("koopman model: embedding must take a 3-dimensional state");
  if (A.rows() != d || A.cols() != d)
    throw SchemaError("koopman model: A must be " + std::to_string(d) + "x" +
                      std::to_string(d));
  if (B1.rows() != d || B1.cols() != kStateDim)
    throw SchemaError("koopman model: B1 has the wrong shape");
  if (B2.rows() != d || B2.cols() != 2)
    throw SchemaError("koopman model: B2 has the wrong shape");
}

bool KoopmanModel::operator==(const KoopmanModel& o) const {
  return embedding == o.embedding && A == o.A && B1 == o.B1 && B2 == o.B2;
}

Eigen::VectorXd embed(const KoopmanModel& m, const RobotState& xf) {
  Eigen::VectorXd y(m.lifted_dim());
  y.head<kStateDim>() = xf.vec();
  y.tail(m.embed_dim()) = m.embedding.forward(xf.vec());
  return y;
}

namespace {

using TrajRefs = std::vector<const Trajectory*>;

TrajRefs refs_of(std::span<const Trajectory> data) {
  TrajRefs r;
  r.reserve(data.size());
  for (const auto& t : data) r.push_back(&t);
  return r;
}

// Column-stacked follower states and leader inputs of a batch.
struct Batch {
  Eigen::MatrixXd states;   // 3 x (sum of S_i + 1)
  Eigen::MatrixXd leader;   // 5 x (sum of S_i)
  std::vector<Eigen::Index> cur, next;
  std::vector<double> weight;
  std::vector<Eigen::Index> state_offset;  // first state column per trajectory
  std::vector<Eigen::Index> tuple_offset;
};

Batch assemble(const TrajRefs& trajs, double gamma) {
  Batch b;
  Eigen::Index n_states = 0, n_tuples = 0;
  for (const auto* t : trajs) {
    if (t->follower.size() < t->steps() + 1 || t->leader.size() < t->steps())
      throw PreconditionError("koopman: trajectory is missing states");
    n_states += static_cast<Eigen::Index>(t->steps()) + 1;
    n_tuples += static_cast<Eigen::Index>(t->steps());
  }
  b.states.resize(kStateDim, n_states);
  b.leader.resize(kLeaderInputDim, n_tuples);
  Eigen::Index sc = 0, tc = 0;
  for (const auto* t : trajs) {
    b.state_offset.push_back(sc);
    b.tuple_offset.push_back(tc);
    const std::size_t s = t->steps();
    double w = 1.0;
    for (std::size_t k = 0; k <= s; ++k) b.states.col(sc + k) = t->follower[k].vec();
    for (std::size_t k = 0; k < s; ++k) {
      b.leader.col(tc).head<3>() = t->leader[k].vec();
      b.leader.col(tc).tail<2>() = t->leader_controls[k].vec();
      b.cur.push_back(sc + k);
      b.next.push_back(sc + k + 1);
      b.weight.push_back(w);
      w *= gamma;
      ++tc;
    }
    sc += static_cast<Eigen::Index>(s) + 1;
  }
  return b;
}

Eigen::MatrixXd lift_all(const KoopmanModel& m, const Eigen::MatrixXd& states,
                         Mlp::Tape* tape) {
  Eigen::MatrixXd y(m.lifted_dim(), states.cols());
  y.topRows<kStateDim>() = states;
  y.bottomRows(m.embed_dim()) =
      tape ? m.embedding.forward(states, *tape) : m.embedding.forward(states);
  return y;
}

Eigen::MatrixXd leader_map(const KoopmanModel& m) {
  Eigen::MatrixXd b(m.lifted_dim(), kLeaderInputDim);
  b << m.B1, m.B2;
  return b;
}

KoopmanGradient loss_impl(const KoopmanModel& m, const TrajRefs& trajs,
                          double gamma, LossMode mode, bool want_grad) {
  if (trajs.empty()) throw PreconditionError("koopman_loss: empty batch");
  const Batch b = assemble(trajs, gamma);
  const double inv_n = 1.0 / static_cast<double>(trajs.size());
  Mlp::Tape tape;
  const Eigen::MatrixXd y = lift_all(m, b.states, want_grad ? &tape : nullptr);
  const Eigen::MatrixXd bmat = leader_map(m);
  const Eigen::Index n_tuples = b.leader.cols();

  KoopmanGradient g;
  Eigen::MatrixXd d_y;
  Eigen::MatrixXd d_b;
  if (want_grad) {
    g.A = Eigen::MatrixXd::Zero(m.A.rows(), m.A.cols());
    d_b = Eigen::MatrixXd::Zero(bmat.rows(), bmat.cols());
    d_y = Eigen::MatrixXd::Zero(y.rows(), y.cols());
  }

  if (mode == LossMode::OneStep) {
    Eigen::MatrixXd y_cur(y.rows(), n_tuples), y_next(y.rows(), n_tuples);
    for (Eigen::Index k = 0; k < n_tuples; ++k) {
      y_cur.col(k) = y.col(b.cur[k]);
      y_next.col(k) = y.col(b.next[k]);
    }
    Eigen::MatrixXd r = y_next - m.A * y_cur - bmat * b.leader;
    const Eigen::Map<const Eigen::VectorXd> w(b.weight.data(), n_tuples);
    g.loss = inv_n * (r.colwise().squaredNorm().transpose().cwiseProduct(w)).sum();
    if (want_grad) {
      const Eigen::MatrixXd d_r = r * (2.0 * inv_n * w).asDiagonal();
      g.A = -d_r * y_cur.transpose();
      d_b = -d_r * b.leader.transpose();
      const Eigen::MatrixXd d_cur = -m.A.transpose() * d_r;
      for (Eigen::Index k = 0; k < n_tuples; ++k) {
        d_y.col(b.next[k]) += d_r.col(k);
        d_y.col(b.cur[k]) += d_cur.col(k);
      }
    }
  } else {
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      const Eigen::Index s = static_cast<Eigen::Index>(trajs[i]->steps());
      const Eigen::Index s0 = b.state_offset[i];
      const Eigen::Index t0 = b.tuple_offset[i];
      Eigen::MatrixXd pred(y.rows(), s + 1);
      pred.col(0) = y.col(s0);
      for (Eigen::Index t = 0; t < s; ++t)
        pred.col(t + 1) = m.A * pred.col(t) + bmat * b.leader.col(t0 + t);
      const Eigen::MatrixXd r = y.middleCols(s0 + 1, s) - pred.rightCols(s);
      for (Eigen::Index t = 0; t < s; ++t)
        g.loss += inv_n * b.weight[t0 + t] * r.col(t).squaredNorm();
      if (!want_grad) continue;
      Eigen::VectorXd carry = Eigen::VectorXd::Zero(y.rows());
      for (Eigen::Index t = s - 1; t >= 0; --t) {
        const Eigen::VectorXd d_r = 2.0 * inv_n * b.weight[t0 + t] * r.col(t);
        d_y.col(s0 + t + 1) += d_r;
        const Eigen::VectorXd d_pred = carry - d_r;  // dL/d pred_{t+1}
        g.A += d_pred * pred.col(t).transpose();
        d_b += d_pred * b.leader.col(t0 + t).transpose();
        carry = m.A.transpose() * d_pred;
      }
      d_y.col(s0) += carry;
    }
  }

  if (want_grad) {
    g.B1 = d_b.leftCols<kStateDim>();
    g.B2 = d_b.rightCols<2>();
    g.embedding = m.embedding.zero_gradient();
    m.embedding.backward(tape, d_y.bottomRows(m.embed_dim()), g.embedding);
  }
  return g;
}

}  // namespace

double koopman_loss(const KoopmanModel& m, std::span<const Trajectory> batch,
                    double gamma, LossMode mode) {
  return loss_impl(m, refs_of(batch), gamma, mode, false).loss;
}

KoopmanGradient koopman_loss_gradient(const KoopmanModel& m,
                                      std::span<const Trajectory> batch,
                                      double gamma, LossMode mode) {
  return loss_impl(m, refs_of(batch), gamma, mode, true);
}

Eigen::VectorXd flatten_parameters(const KoopmanModel& m) {
  const Eigen::Index ne = m.embedding.parameter_count();
  Eigen::VectorXd p(ne + m.A.size() + m.B1.size() + m.B2.size());
  m.embedding.write_parameters(p.head(ne));
  Eigen::Index k = ne;
  for (const auto* mat : {&m.A, &m.B1, &m.B2}) {
    p.segment(k, mat->size()) = Eigen::Map<const Eigen::VectorXd>(mat->data(), mat->size());
    k += mat->size();
  }
  return p;
}

void unflatten_parameters(KoopmanModel& m, const Eigen::VectorXd& p) {
  const Eigen::Index ne = m.embedding.parameter_count();
  m.embedding.read_parameters(p.head(ne));
  Eigen::Index k = ne;
  for (auto* mat : {&m.A, &m.B1, &m.B2}) {
    Eigen::Map<Eigen::VectorXd>(mat->data(), mat->size()) = p.segment(k, mat->size());
    k += mat->size();
  }
}

Eigen::VectorXd flatten_gradient(const KoopmanGradient& g) {
  Eigen::Index ne = 0;
  for (std::size_t l = 0; l < g.embedding.weights.size(); ++l)
    ne += g.embedding.weights[l].size() + g.embedding.biases[l].size();
  Eigen::VectorXd p(ne + g.A.size() + g.B1.size() + g.B2.size());
  Mlp::write_gradient(g.embedding, p.head(ne));
  Eigen::Index k = ne;
  for (const auto* mat : {&g.A, &g.B1, &g.B2}) {
    p.segment(k, mat->size()) = Eigen::Map<const Eigen::VectorXd>(mat->data(), mat->size());
    k += mat->size();
  }
  return p;
}

TrainResult train_koopman(std::span<const Trajectory> data,
                          const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw PreconditionError("train_koopman: empty dataset");
  for (const auto& t : data)
    if (t.steps() < 1)
      throw PreconditionError("train_koopman: trajectories need at least one step");

  TrainResult res;
  res.model = KoopmanModel::initialize(cfg);
  KoopmanModel& model = res.model;
  const TrajRefs all = refs_of(data);
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5deece66dULL);

  Eigen::VectorXd params = flatten_parameters(model);
  Optimizer opt(cfg.optimizer, cfg.learning_rate, params.size());
  double best_loss = loss_impl(model, all, cfg.gamma, cfg.loss_mode, false).loss;
  res.curve.push_back(best_loss);
  Eigen::VectorXd best_params = params;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      TrajRefs batch;
      for (std::size_t k = start; k < stop; ++k) batch.push_back(all[order[k]]);
      const KoopmanGradient g = loss_impl(model, batch, cfg.gamma, cfg.loss_mode, true);
      const Eigen::VectorXd flat = flatten_gradient(g);
      if (!std::isfinite(g.loss) || !flat.allFinite()) {
        std::ostringstream msg;
        msg << "train_koopman: non-finite loss at epoch " << epoch
            << ", batch starting at " << start << " (last full loss "
            << res.curve.back() << ")";
        throw DivergenceError(msg.str());
      }
      opt.step(params, flat);
      unflatten_parameters(model, params);
    }
    const double loss = loss_impl(model, all, cfg.gamma, cfg.loss_mode, false).loss;
    if (!std::isfinite(loss)) {
      throw DivergenceError("train_koopman: non-finite training loss after epoch " +
                            std::to_string(epoch));
    }
    res.curve.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best_params = params;
      res.best_epoch = epoch;
    }
  }
  unflatten_parameters(model, best_params);
  return res;
}

std::vector<RobotState> predict_rollout(const KoopmanModel& m,
                                        const RobotState& xf0,
                                        std::span<const LeaderInput> leader_seq) {
  std::vector<RobotState> out;
  out.reserve(leader_seq.size());
  if (leader_seq.empty()) return out;
  Eigen::VectorXd y = embed(m, xf0);
  for (const auto& w : leader_seq) {
    y = m.A * y + m.B1 * w.state.vec() + m.B2 * w.control.vec();
    out.push_back(RobotState::from(y.head<kStateDim>()));
  }
  return out;
}

double koopman_one_step_state_mse(const KoopmanModel& m,
                                  std::span<const Trajectory> data) {
  const Batch b = assemble(refs_of(data), 1.0);
  const Eigen::MatrixXd y = lift_all(m, b.states, nullptr);
  const Eigen::MatrixXd bmat = leader_map(m);
  double sum = 0.0;
  for (Eigen::Index k = 0; k < b.leader.cols(); ++k) {
    const Eigen::VectorXd pred =
        m.A.topRows<kStateDim>() * y.col(b.cur[k]) +
        bmat.topRows<kStateDim>() * b.leader.col(k);
    sum += (b.states.col(b.next[k]) - pred).squaredNorm();
  }
  return sum / static_cast<double>(b.leader.cols());
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json data = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index rows,
                                 Eigen::Index cols, const std::string& what) {
  const auto r = j.at("rows").get<Eigen::Index>();
  const auto c = j.at("cols").get<Eigen::Index>();
  if (r != rows || c != cols)
    throw SchemaError(what + ": expected " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", found " + std::to_string(r) +
                      "x" + std::to_string(c));
  const auto& data = j.at("data");
  if (!data.is_array() || static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw SchemaError(what + ": data length does not match its shape");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = data[i * cols + k].get<double>();
  return m;
}

nlohmann::json mlp_to_json(const Mlp& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (int l = 0; l < net.layer_count(); ++l)
    layers.push_back({{"weight", matrix_to_json(net.weights()[l])},
                      {"bias", matrix_to_json(net.biases()[l])}});
  return {{"layer_sizes", net.layer_sizes()}, {"layers", layers}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
  const auto sizes = j.at("layer_sizes").get<std::vector<int>>();
  Mlp net = Mlp::zeros(sizes);
  const auto& layers = j.at("layers");
  if (!layers.is_array() || static_cast<int>(layers.size()) != net.layer_count())
    throw SchemaError("network: layer count does not match layer_sizes");
  for (int l = 0; l < net.layer_count(); ++l) {
    net.weights()[l] = matrix_from_json(layers[l].at("weight"), sizes[l + 1],
                                        sizes[l], "network weight");
    net.biases()[l] = matrix_from_json(layers[l].at("bias"), sizes[l + 1], 1,
                                       "network bias");
  }
  return net;
}

namespace {
constexpr const char* kCheckpointFormat = "koopguide-checkpoint";
constexpr int kCheckpointVersion = 1;
}  // namespace

nlohmann::json to_json(const KoopmanModel& m) {
  return {{"embed_dim", m.embed_dim()},
          {"state_dim", kStateDim},
          {"embedding", mlp_to_json(m.embedding)},
          {"A", matrix_to_json(m.A)},
          {"B1", matrix_to_json(m.B1)},
          {"B2", matrix_to_json(m.B2)},
          {"train_config", to_json(m.config)}};
}

KoopmanModel koopman_model_from_json(const nlohmann::json& j) {
  KoopmanModel m;
  try {
    const int q = j.at("embed_dim").get<int>();
    if (j.at("state_dim").get<int>() != kStateDim)
      throw SchemaError("koopman model: state_dim must be 3");
    m.embedding = mlp_from_json(j.at("embedding"));
    if (m.embedding.output_dim() != q)
      throw SchemaError("koopman model: embedding output width " +
                        std::to_string(m.embedding.output_dim()) +
                        " does not match embed_dim " + std::to_string(q));
    const int d = kStateDim + q;
    m.A = matrix_from_json(j.at("A"), d, d, "A");
    m.B1 = matrix_from_json(j.at("B1"), d, kStateDim, "B1");
    m.B2 = matrix_from_json(j.at("B2"), d, 2, "B2");
    m.config = train_config_from_json(j.at("train_config"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("koopman model: ") + e.what());
  }
  m.check_dimensions();
  return m;
}

nlohmann::json read_checkpoint(const std::filesystem::path& path,
                               const std::string& kind) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open model file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (!j.is_object() || j.value("format", std::string()) != kCheckpointFormat)
    throw SchemaError(path.string() + ": not a koopguide checkpoint");
  if (j.value("version", -1) != kCheckpointVersion)
    throw SchemaError(path.string() + ": unsupported checkpoint version");
  if (j.value("kind", std::string()) != kind)
    throw SchemaError(path.string() + ": expected a '" + kind + "' checkpoint, found '" +
                      j.value("kind", std::string()) + "'");
  if (!j.contains("model")) throw SchemaError(path.string() + ": missing model body");
  return j.at("model");
}

void write_checkpoint(const nlohmann::json& body, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  nlohmann::json j = {{"format", kCheckpointFormat},
                      {"version", kCheckpointVersion},
                      {"kind", body.at("kind")},
                      {"model", body.at("model")}};
  out << j.dump() << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void save_model(const KoopmanModel& m, const std::filesystem::path& path) {
  write_checkpoint({{"kind", "koopman"}, {"model", to_json(m)}}, path);
}

KoopmanModel load_model(const std::filesystem::path& path) {
  return koopman_model_from_json(read_checkpoint(path, "koopman"));
}

}  // namespace koopguide
