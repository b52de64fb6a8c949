#include "koopguide/predictor.hpp"

#include <array>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "koopguide/errors.hpp"

namespace koopguide {

std::vector<RobotState> predict_follower(const FollowerPredictor& p,
                                         const RobotState& xf0,
                                         std::span<const LeaderInput> leader_seq) {
  std::vector<RobotState> out;
  out.reserve(leader_seq.size());
  if (leader_seq.empty()) return out;
  Eigen::VectorXd y = p.lift(xf0);
  for (const auto& w : leader_seq) {
    y = p.advance(y, w.state, w.control, nullptr);
    out.push_back(RobotState::from(y.head<3>()));
  }
  return out;
}

KoopmanPredictor::KoopmanPredictor(KoopmanModel m) : model_(std::move(m)) {
  model_.check_dimensions();
}

Eigen::VectorXd KoopmanPredictor::lift(const RobotState& xf) const {
  return embed(model_, xf);
}

Eigen::VectorXd KoopmanPredictor::advance(const Eigen::VectorXd& y,
                                          const RobotState& xl,
                                          const RobotControl& ul,
                                          PredictorJacobian* jac) const {
  if (jac) {
    jac->d_y = model_.A;
    jac->d_xl = model_.B1;
    jac->d_ul = model_.B2;
  }
  return model_.A * y + model_.B1 * xl.vec() + model_.B2 * ul.vec();
}

Eigen::VectorXd DmdPredictor::advance(const Eigen::VectorXd& y,
                                      const RobotState& xl,
                                      const RobotControl& ul,
                                      PredictorJacobian* jac) const {
  if (jac) {
    jac->d_y = model_.A;
    jac->d_xl = model_.B.leftCols<3>();
    jac->d_ul = model_.B.rightCols<2>();
  }
  return dmd_step(model_, RobotState::from(y), xl, ul).vec();
}

Eigen::VectorXd NnPredictor::advance(const Eigen::VectorXd& y,
                                     const RobotState& xl,
                                     const RobotControl& ul,
                                     PredictorJacobian* jac) const {
  const RobotState xf = RobotState::from(y);
  if (jac) {
    const Eigen::Matrix<double, 3, 8> j = model_.jacobian(xf, xl, ul);
    jac->d_y = j.leftCols<3>();
    jac->d_xl = j.middleCols<3>(3);
    jac->d_ul = j.rightCols<2>();
  }
  return model_.step(xf, xl, ul).vec();
}

Eigen::VectorXd GridFeedbackPredictor::advance(const Eigen::VectorXd& y,
                                               const RobotState& xl,
                                               const RobotControl& ul,
                                               PredictorJacobian* jac) const {
  if (jac) throw PreconditionError("oracle predictor has no Jacobian");
  const JointState x{xl, RobotState::from(y)};
  return feedback_step(x, ul, fw_, env_, grid_, dt_).vec();
}

namespace {

const Eigen::Vector2d kLower{kMinSpeed, -kMaxTurnRate};
const Eigen::Vector2d kUpper{kMaxSpeed, kMaxTurnRate};

double cost_or_inf(const RobotState& xf, const Eigen::Vector2d& u,
                   const RobotState& xl, const RobotControl& ul,
                   const FollowerWeights& w, const Environment& env, double dt) {
  try {
    return penalized_follower_cost(xf, RobotControl::from(u), xl, ul, w, env, dt);
  } catch (const DomainError&) {
    return std::numeric_limits<double>::infinity();
  }
}

// Components pinned at a bound with the gradient pushing outward.
std::array<bool, 2> active_set(const Eigen::Vector2d& u, const Eigen::Vector2d& g) {
  std::array<bool, 2> a{};
  for (int i = 0; i < 2; ++i)
    a[i] = (u(i) <= kLower(i) && g(i) > 0.0) || (u(i) >= kUpper(i) && g(i) < 0.0);
  return a;
}

}  // namespace

SmoothFeedbackPredictor::SmoothFeedbackPredictor(Environment env,
                                                 FollowerWeights fw,
                                                 GridSpec grid, double dt)
    : env_(std::move(env)), fw_(fw), grid_(grid), dt_(dt) {
  const double inf = std::numeric_limits<double>::infinity();
  env_.bounds = {-inf, inf, -inf, inf};
}

RobotControl SmoothFeedbackPredictor::response(const RobotState& xf,
                                               const RobotState& xl,
                                               const RobotControl& ul) const {
  const RobotControl grid_u = best_response({xl, xf}, ul, fw_, env_, grid_, dt_);
  Eigen::Vector2d u = grid_u.vec();
  double f = cost_or_inf(xf, u, xl, ul, fw_, env_, dt_);
  for (int it = 0; it < 50; ++it) {
    const StationarityTerms st =
        follower_stationarity(xf, RobotControl::from(u), xl, ul, fw_, env_, dt_);
    const auto act = active_set(u, st.s);
    Eigen::Vector2d pg = st.s;
    for (int i = 0; i < 2; ++i)
      if (act[i]) pg(i) = 0.0;
    if (pg.norm() < 1e-12) break;

    // Newton direction on the free components, regularized until positive
    // definite.
    Eigen::Vector2d d = Eigen::Vector2d::Zero();
    Eigen::Matrix2d h = st.d_uf;
    for (int i = 0; i < 2; ++i)
      if (act[i]) {
        h.row(i).setZero();
        h.col(i).setZero();
        h(i, i) = 1.0;
      }
    double shift = 0.0;
    for (int tries = 0; tries < 30; ++tries) {
      Eigen::LLT<Eigen::Matrix2d> llt(h + shift * Eigen::Matrix2d::Identity());
      if (llt.info() == Eigen::Success) {
        d = -llt.solve(pg);
        break;
      }
      shift = shift == 0.0 ? 1e-6 : shift * 10.0;
    }
    if (!(d.dot(pg) < 0.0)) d = -pg;

    double alpha = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls) {
      const Eigen::Vector2d trial = (u + alpha * d).cwiseMax(kLower).cwiseMin(kUpper);
      const double ft = cost_or_inf(xf, trial, xl, ul, fw_, env_, dt_);
      const bool newton_tail = ls == 0 && pg.norm() < 1e-6 && std::isfinite(ft);
      if (ft <= f + 1e-4 * pg.dot(trial - u) || newton_tail) {
        moved = (trial - u).norm() > 0.0;
        u = trial;
        f = ft;
        break;
      }
      alpha *= 0.5;
    }
    if (!moved) break;
  }
  return RobotControl::from(u);
}

Eigen::VectorXd SmoothFeedbackPredictor::advance(const Eigen::VectorXd& y,
                                                 const RobotState& xl,
                                                 const RobotControl& ul,
                                                 PredictorJacobian* jac) const {
  const RobotState xf = RobotState::from(y);
  const RobotControl uf = response(xf, xl, ul);
  if (jac) {
    const StationarityTerms st = follower_stationarity(xf, uf, xl, ul, fw_, env_, dt_);
    const auto act = active_set(uf.vec(), st.s);
    // du/d(xf, xl, ul) on free components from H du = -d s.
    Eigen::Matrix<double, 2, 8> rhs;
    rhs << st.d_xf, st.d_xl, st.d_ul;
    Eigen::Matrix<double, 2, 8> du = Eigen::Matrix<double, 2, 8>::Zero();
    const bool free0 = !act[0], free1 = !act[1];
    if (free0 && free1) {
      du = -st.d_uf.fullPivLu().solve(rhs);
    } else if (free0 || free1) {
      const int i = free0 ? 0 : 1;
      if (std::abs(st.d_uf(i, i)) > 1e-12) du.row(i) = -rhs.row(i) / st.d_uf(i, i);
    }
    const Eigen::Matrix<double, 3, 2> bu = step_control_jacobian(xf, dt_);
    jac->d_y = step_state_jacobian(xf, uf, dt_) + bu * du.leftCols<3>();
    jac->d_xl = bu * du.middleCols<3>(3);
    jac->d_ul = bu * du.rightCols<2>();
  }
  return step(xf, uf, dt_).vec();
}

}  // namespace koopguide
