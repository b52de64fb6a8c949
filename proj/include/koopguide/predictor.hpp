#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "koopguide/baselines.hpp"
#include "koopguide/environment.hpp"
#include "koopguide/follower.hpp"
#include "koopguide/koopman.hpp"
#include "koopguide/trajectory.hpp"

namespace koopguide {

/// Partial derivatives of one latent transition.
struct PredictorJacobian {
  Eigen::MatrixXd d_y;   // d x d
  Eigen::MatrixXd d_xl;  // d x 3
  Eigen::MatrixXd d_ul;  // d x 2
};

/// "Predict the next follower state from (x^F, x^L, u^L)" through a latent
/// state whose first three entries are the follower pose.
class FollowerPredictor {
 public:
  virtual ~FollowerPredictor() = default;
  virtual std::string name() const = 0;
  virtual Eigen::Index latent_dim() const = 0;
  virtual Eigen::VectorXd lift(const RobotState& xf) const = 0;
  /// Writes the transition Jacobian when `jac` is non-null. Predictors that
  /// are not differentiable throw PreconditionError in that case.
  virtual Eigen::VectorXd advance(const Eigen::VectorXd& y,
                                  const RobotState& xl, const RobotControl& ul,
                                  PredictorJacobian* jac) const = 0;
  virtual bool differentiable() const { return true; }
};

/// Follower states 1..len(leader_seq) predicted from xf0.
std::vector<RobotState> predict_follower(const FollowerPredictor& p,
                                         const RobotState& xf0,
                                         std::span<const LeaderInput> leader_seq);

class KoopmanPredictor : public FollowerPredictor {
 public:
  explicit KoopmanPredictor(KoopmanModel m);
  std::string name() const override { return "koopman"; }
  Eigen::Index latent_dim() const override { return model_.lifted_dim(); }
  Eigen::VectorXd lift(const RobotState& xf) const override;
  Eigen::VectorXd advance(const Eigen::VectorXd& y, const RobotState& xl,
                          const RobotControl& ul,
                          PredictorJacobian* jac) const override;
  const KoopmanModel& model() const { return model_; }

 private:
  KoopmanModel model_;
};

class DmdPredictor : public FollowerPredictor {
 public:
  explicit DmdPredictor(DmdModel m) : model_(std::move(m)) {}
  std::string name() const override { return "dmd"; }
  Eigen::Index latent_dim() const override { return 3; }
  Eigen::VectorXd lift(const RobotState& xf) const override { return xf.vec(); }
  Eigen::VectorXd advance(const Eigen::VectorXd& y, const RobotState& xl,
                          const RobotControl& ul,
                          PredictorJacobian* jac) const override;

 private:
  DmdModel model_;
};

class NnPredictor : public FollowerPredictor {
 public:
  explicit NnPredictor(OneStepNet m) : model_(std::move(m)) {}
  std::string name() const override { return "nn"; }
  Eigen::Index latent_dim() const override { return 3; }
  Eigen::VectorXd lift(const RobotState& xf) const override { return xf.vec(); }
  Eigen::VectorXd advance(const Eigen::VectorXd& y, const RobotState& xl,
                          const RobotControl& ul,
                          PredictorJacobian* jac) const override;

 private:
  OneStepNet model_;
};

/// Ground-truth feedback dynamics (grid best response). Not differentiable.
class GridFeedbackPredictor : public FollowerPredictor {
 public:
  GridFeedbackPredictor(Environment env, FollowerWeights fw, GridSpec grid,
                        double dt)
      : env_(std::move(env)), fw_(fw), grid_(grid), dt_(dt) {}
  std::string name() const override { return "oracle"; }
  Eigen::Index latent_dim() const override { return 3; }
  Eigen::VectorXd lift(const RobotState& xf) const override { return xf.vec(); }
  Eigen::VectorXd advance(const Eigen::VectorXd& y, const RobotState& xl,
                          const RobotControl& ul,
                          PredictorJacobian* jac) const override;
  bool differentiable() const override { return false; }

 private:
  Environment env_;
  FollowerWeights fw_;
  GridSpec grid_;
  double dt_;
};

/// Continuous best response of the barrier-penalized follower cost over the
/// control box, refined by projected Newton from the grid best response.
/// Its Jacobian follows from the implicit function theorem on the free
/// components. This is the follower model the first-order-condition planner
/// assumes, exposed as a differentiable predictor. Like that model, it does
/// not confine the follower to the workspace bounds.
class SmoothFeedbackPredictor : public FollowerPredictor {
 public:
  SmoothFeedbackPredictor(Environment env, FollowerWeights fw, GridSpec grid,
                          double dt);
  std::string name() const override { return "smooth_oracle"; }
  Eigen::Index latent_dim() const override { return 3; }
  Eigen::VectorXd lift(const RobotState& xf) const override { return xf.vec(); }
  Eigen::VectorXd advance(const Eigen::VectorXd& y, const RobotState& xl,
                          const RobotControl& ul,
                          PredictorJacobian* jac) const override;

  /// The refined follower control.
  RobotControl response(const RobotState& xf, const RobotState& xl,
                        const RobotControl& ul) const;

 private:
  Environment env_;
  FollowerWeights fw_;
  GridSpec grid_;
  double dt_;
};

}  // namespace koopguide
