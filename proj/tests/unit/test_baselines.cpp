#include <gtest/gtest.h>

#include <Eigen/QR>

#include "koopguide/baselines.hpp"
#include "koopguide/dataset.hpp"
#include "koopguide/errors.hpp"
#include "koopguide/koopman.hpp"
#include "test_util.hpp"

using namespace koopguide;

TEST(FitDmd, RecoversKnownLinearSystem) {
  const auto [a, b] = test::reference_system();
  const auto data = test::linear_system_data(a, b, 50, 10, 1);
  const DmdModel m = fit_dmd(data);
  EXPECT_LT((m.A - a).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((m.B - b).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(m.residual, 1e-20);
}

TEST(FitDmd, MatchesNormalEquations) {
  const auto [a, b] = test::reference_system();
  auto data = test::linear_system_data(a, b, 30, 10, 2);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (auto& tr : data)
    for (auto& x : tr.follower) x = {x.px + noise(rng), x.py + noise(rng), x.theta + noise(rng)};
  Eigen::MatrixXd w(8, 300), y(3, 300);
  int col = 0;
  for (const auto& tr : data)
    for (std::size_t t = 0; t < tr.steps(); ++t, ++col) {
      w.col(col) << tr.follower[t].vec(), tr.leader[t].vec(), tr.leader_controls[t].vec();
      y.col(col) = tr.follower[t + 1].vec();
    }
  const Eigen::MatrixXd k = (w * w.transpose()).ldlt().solve(w * y.transpose()).transpose();
  const DmdModel m = fit_dmd(data);
  EXPECT_LT((m.A - k.leftCols<3>()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((m.B - k.rightCols<5>()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(m.residual, dmd_one_step_state_mse(m, data), 1e-14);
}

TEST(FitDmd, RepeatedSampleIsRankDeficient) {
  Trajectory tr;
  tr.follower = std::vector<RobotState>(6, RobotState{1, 2, 3});
  tr.leader = std::vector<RobotState>(6, RobotState{4, 5, 6});
  tr.leader_controls = std::vector<RobotControl>(5, RobotControl{1, 1});
  const std::vector<Trajectory> data{tr};
  try {
    fit_dmd(data);
    FAIL() << "expected a rank error";
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("rank"), std::string::npos);
  }
}

TEST(FitDmd, EmptyIsPreconditionError) {
  EXPECT_THROW(fit_dmd({}), PreconditionError);
}

TEST(FitDmd, SaveLoadRoundTrip) {
  const auto [a, b] = test::reference_system();
  const DmdModel m = fit_dmd(test::linear_system_data(a, b, 10, 10, 4));
  const auto dir = test::scratch_dir("dmd");
  save_dmd(m, dir / "d.json");
  EXPECT_TRUE(load_dmd(dir / "d.json") == m);
  EXPECT_EQ(dmd_step(m, {1, 2, 3}, {4, 5, 6}, {1, 0.5}).vec(),
            m.A * Eigen::Vector3d(1, 2, 3) + m.B * (Eigen::Matrix<double, 5, 1>() << 4, 5, 6, 1, 0.5).finished());
}

TEST(OneStepNn, LearnsConstantMap) {
  const auto [a, b] = test::reference_system();
  auto data = test::linear_system_data(a, b, 200, 10, 5);
  for (auto& tr : data)
    for (std::size_t t = 1; t < tr.follower.size(); ++t) tr.follower[t] = tr.follower[0];
  auto held = test::linear_system_data(a, b, 10, 10, 6);
  for (auto& tr : held)
    for (std::size_t t = 1; t < tr.follower.size(); ++t) tr.follower[t] = tr.follower[0];
  NnTrainConfig cfg;
  cfg.epochs = 300;
  const NnTrainResult r = train_one_step_nn(data, cfg);
  EXPECT_LT(nn_one_step_state_mse(r.model, held), 1e-2);
  EXPECT_LE(r.curve[r.best_epoch], r.curve.front());
}

TEST(OneStepNn, EmptyIsPreconditionError) {
  EXPECT_THROW(train_one_step_nn({}, NnTrainConfig{}), PreconditionError);
}

TEST(OneStepNn, DeterministicAndRoundTrips) {
  const auto [a, b] = test::reference_system();
  const auto data = test::linear_system_data(a, b, 10, 10, 7);
  NnTrainConfig cfg;
  cfg.epochs = 5;
  const NnTrainResult r1 = train_one_step_nn(data, cfg);
  const NnTrainResult r2 = train_one_step_nn(data, cfg);
  EXPECT_TRUE(r1.model == r2.model);
  const auto dir = test::scratch_dir("nn");
  save_nn(r1.model, dir / "n.json");
  EXPECT_TRUE(load_nn(dir / "n.json") == r1.model);
  EXPECT_THROW(load_model(dir / "n.json"), SchemaError);
}

TEST(OneStepNn, JacobianMatchesFiniteDifferences) {
  const auto [a, b] = test::reference_system();
  NnTrainConfig cfg;
  cfg.epochs = 3;
  const OneStepNet m = train_one_step_nn(test::linear_system_data(a, b, 10, 10, 8), cfg).model;
  std::mt19937_64 rng(9);
  const Environment env = test::empty_env();
  for (int i = 0; i < 100; ++i) {
    const RobotState xf = test::random_state(rng, env), xl = test::random_state(rng, env);
    const RobotControl ul = test::random_control(rng);
    Eigen::Matrix<double, 8, 1> w;
    w << xf.vec(), xl.vec(), ul.vec();
    auto f = [&](const Eigen::Matrix<double, 8, 1>& v) {
      return m.step(RobotState::from(v.head<3>()), RobotState::from(v.segment<3>(3)),
                    RobotControl::from(v.tail<2>())).vec();
    };
    Eigen::Matrix<double, 3, 8> fd;
    for (int k = 0; k < 8; ++k) {
      Eigen::Matrix<double, 8, 1> e = Eigen::Matrix<double, 8, 1>::Zero();
      e(k) = 1e-6;
      fd.col(k) = (f(w + e) - f(w - e)) / 2e-6;
    }
    EXPECT_LT(test::rel_error(m.jacobian(xf, xl, ul), fd), 1e-4);
  }
}

TEST(NonlinearityGap, DmdResidualExceedsKoopmanOnInteractionData) {
  const Environment env = test::default_env();
  const InteractionDataset d = generate_dataset(env, 200, 30, LeaderPolicy::Mixed, 11);
  TrainConfig cfg;
  cfg.epochs = 60;
  const TrainResult r = train_koopman(d.trajectories, cfg);
  const DmdModel dmd = fit_dmd(d.trajectories);
  EXPECT_GT(dmd.residual, koopman_one_step_state_mse(r.model, d.trajectories));
}
