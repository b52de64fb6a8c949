#include <gtest/gtest.h>

#include <memory>
#include <random>

#include "koopguide/errors.hpp"
#include "koopguide/model_based_planner.hpp"
#include "koopguide/rh_planner.hpp"
#include "test_util.hpp"

using namespace koopguide;

namespace {

KoopmanModel random_model(std::uint64_t seed) {
  TrainConfig c;
  c.embed_dim = 4;
  c.hidden_width = 8;
  c.hidden_layers = 2;
  c.seed = seed;
  KoopmanModel m = KoopmanModel::initialize(c);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  m.B1.topRows<3>() += Eigen::MatrixXd::Identity(3, 3) * 0.1;
  for (Eigen::Index i = 0; i < m.B2.size(); ++i) m.B2(i) += u(rng);
  m.A.topLeftCorner<3, 3>() *= 0.9;
  return m;
}

KoopmanModel frozen_model() {
  KoopmanModel m = random_model(0);
  m.A.setZero();
  m.A.topLeftCorner<3, 3>().setIdentity();
  m.B1.setZero();
  m.B2.setZero();
  return m;
}

std::shared_ptr<const FollowerPredictor> koopman(KoopmanModel m) {
  return std::make_shared<KoopmanPredictor>(std::move(m));
}

JointState random_joint(std::mt19937_64& rng, const Environment& env) {
  const RobotState f = test::random_state(rng, env, 0.3);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (;;) {
    RobotState l{f.px + u(rng), f.py + u(rng), f.theta + u(rng)};
    if (env.bounds.contains(l.position()) && env.min_clearance(l.position()) > 0.1) return {l, f};
  }
}

void expect_valid_episode(const GuidanceEpisode& e, const Environment& env, double feas_tol) {
  ASSERT_NO_THROW(e.check());
  const auto replay = rollout(e.states.front().leader, e.leader_controls, e.dt);
  for (std::size_t k = 0; k < e.steps(); ++k) {
    EXPECT_EQ(replay[k], e.states[k + 1].leader);
    EXPECT_EQ(step(e.states[k].follower, e.follower_controls[k], e.dt), e.states[k + 1].follower);
    EXPECT_EQ(best_response(e.states[k], e.leader_controls[k], FollowerWeights{}, env, GridSpec{}, e.dt),
              e.follower_controls[k]);
    EXPECT_GE(env.min_clearance(e.states[k + 1].leader.position()), -feas_tol);
    EXPECT_GT(env.min_clearance(e.states[k + 1].follower.position()), 0.0);
    EXPECT_GT(e.planning_times[k], 0.0);
  }
}

}  // namespace

TEST(KpProblem, Dimensions) {
  const Environment env = test::default_env();
  const JointState x{{1, 1, 0}, {1, 1, 0}};
  const NlpProblem p = build_kp_problem(x, koopman(random_model(1)), ObjectiveMode::HeadToDestination, env,
                                        LeaderWeights{}, 0.2);
  EXPECT_EQ(p.decision_dim, 10);
  EXPECT_EQ(p.eq_count(), 0);
  EXPECT_EQ(p.ineq_count(), 20);
  const NlpProblem q = build_kp_problem(x, koopman(random_model(1)), ObjectiveMode::HeadToDestination, env,
                                        LeaderWeights{}, 0.2, true);
  EXPECT_EQ(q.ineq_count(), 40);
}

TEST(KpProblem, RejectsNonDifferentiablePredictorAndUnsafeStart) {
  const Environment env = test::default_env();
  auto oracle = std::make_shared<GridFeedbackPredictor>(env, FollowerWeights{}, GridSpec{}, 0.2);
  EXPECT_THROW(build_kp_problem({{1, 1, 0}, {1, 1, 0}}, oracle, ObjectiveMode::HeadToDestination, env,
                                LeaderWeights{}, 0.2),
               PreconditionError);
  EXPECT_THROW(build_kp_problem({{3.8, 4.6, 0}, {1, 1, 0}}, koopman(random_model(1)),
                                ObjectiveMode::HeadToDestination, env, LeaderWeights{}, 0.2),
               PreconditionError);
}

TEST(KpProblem, JacobiansMatchFiniteDifferences) {
  const Environment env = test::default_env();
  std::mt19937_64 rng(41);
  for (int i = 0; i < 100; ++i) {
    const JointState x = random_joint(rng, env);
    const ObjectiveMode mode = select_objective(x.leader, x.follower, 1.0);
    const NlpProblem p = build_kp_problem(x, koopman(random_model(i)), mode, env, LeaderWeights{}, 0.2, true);
    Eigen::VectorXd z(10);
    for (int t = 0; t < 5; ++t) z.segment<2>(2 * t) = test::random_control(rng).vec();
    Eigen::VectorXd g;
    p.objective(z, &g);
    EXPECT_LT(test::rel_error(g, fd_objective_gradient(p, z)), 1e-4);
    for (const auto& block : p.ineq_constraints) {
      Eigen::VectorXd c;
      Eigen::MatrixXd j;
      block.eval(z, c, &j);
      EXPECT_LT(test::rel_error(j, fd_constraint_jacobian(block, z)), 1e-4);
    }
  }
}

TEST(RecedingHorizonPlanner, ControlInsensitiveModelStillHeadsToDestination) {
  const Environment env = test::empty_env();
  RecedingHorizonPlanner planner(env, LeaderWeights{}, koopman(frozen_model()), 0.2);
  const JointState x{{5, 5, 0.785}, {5, 5, 0.785}};
  const PlanResult r = planner.plan(x);
  EXPECT_EQ(r.mode, ObjectiveMode::HeadToDestination);
  for (const auto& s : r.predicted_follower) EXPECT_EQ(s, x.follower);
  const auto path = rollout(x.leader, r.leader_controls, 0.2);
  const Eigen::Vector2d d = env.destination.position();
  EXPECT_LT((path.back().position() - d).norm(), (x.leader.position() - d).norm() - 0.05);
}

TEST(RecedingHorizonPlanner, StationaryAtDestination) {
  const Environment env = test::default_env();
  RecedingHorizonPlanner planner(env, LeaderWeights{}, koopman(frozen_model()), 0.2);
  const PlanResult r = planner.plan({env.destination, env.destination});
  EXPECT_LT(r.control.vec().norm(), 1e-3);
}

TEST(RecedingHorizonPlanner, ObstacleAheadKeepsClearance) {
  const Environment env = test::default_env();
  RecedingHorizonPlanner planner(env, LeaderWeights{}, koopman(random_model(2)), 0.2);
  const JointState x{{2.3, 4.6, 0.0}, {1.8, 4.6, 0.0}};
  ASSERT_LT(env.min_clearance(step(x.leader, {kMaxSpeed, 0}, 0.2).position()), 0.0);
  const PlanResult r = planner.plan(x);
  EXPECT_GE(env.min_clearance(step(x.leader, r.control, 0.2).position()), 0.0);
}

TEST(RecedingHorizonPlanner, DeterministicAfterReset) {
  const Environment env = test::default_env();
  RecedingHorizonPlanner planner(env, LeaderWeights{}, koopman(random_model(3)), 0.2);
  const JointState x{{5.5, 0.5, 1.57}, {5.5, 0.2, 1.57}};
  const PlanResult a = planner.plan(x);
  planner.reset();
  const PlanResult b = planner.plan(x);
  EXPECT_EQ(a.control, b.control);
  EXPECT_EQ(a.leader_controls, b.leader_controls);
  EXPECT_EQ(planner.name(), "koopman");
}

TEST(RunGuidance, StartAtGoalIsReachedImmediately) {
  const Environment env = test::default_env();
  ModelBasedPlanner planner(env, LeaderWeights{}, FollowerWeights{}, 0.2);
  const RobotState s{8.8, 8.9, 0};
  const GuidanceEpisode e = run_guidance({s, s}, planner, env, FollowerWeights{}, GridSpec{}, 0.2);
  EXPECT_EQ(e.outcome, EpisodeOutcome::Reached);
  EXPECT_EQ(e.steps(), 0u);
  EXPECT_EQ(e.states.size(), 1u);
}

TEST(RunGuidance, ObstacleFreeRunsReachDestination) {
  const Environment env = test::empty_env();
  const RobotState s{5.5, 0, 0};
  ModelBasedPlanner foc(env, LeaderWeights{}, FollowerWeights{}, 0.2);
  const GuidanceEpisode a = run_guidance({s, s}, foc, env, FollowerWeights{}, GridSpec{}, 0.2);
  EXPECT_EQ(a.outcome, EpisodeOutcome::Reached);
  EXPECT_LE(a.steps(), 200u);
  expect_valid_episode(a, env, 1e-4);

  auto oracle = std::make_shared<SmoothFeedbackPredictor>(env, FollowerWeights{}, GridSpec{}, 0.2);
  RecedingHorizonPlanner kp(env, LeaderWeights{}, oracle, 0.2);
  const GuidanceEpisode b = run_guidance({s, s}, kp, env, FollowerWeights{}, GridSpec{}, 0.2);
  EXPECT_EQ(b.outcome, EpisodeOutcome::Reached);
  expect_valid_episode(b, env, 1e-4);
}

TEST(RunGuidance, ExactPredictorMatchesModelBasedPlanner) {
  const Environment env = test::empty_env();
  auto oracle = std::make_shared<SmoothFeedbackPredictor>(env, FollowerWeights{}, GridSpec{}, 0.2);
  for (const RobotState& s : {RobotState{5.5, 0, 1.57}, RobotState{0, 8.5, 0}, RobotState{0.5, 3, 0.785}}) {
    ModelBasedPlanner foc(env, LeaderWeights{}, FollowerWeights{}, 0.2);
    RecedingHorizonPlanner kp(env, LeaderWeights{}, oracle, 0.2);
    const GuidanceEpisode a = run_guidance({s, s}, foc, env, FollowerWeights{}, GridSpec{}, 0.2);
    const GuidanceEpisode b = run_guidance({s, s}, kp, env, FollowerWeights{}, GridSpec{}, 0.2);
    const std::size_t n = std::min(a.steps(), b.steps());
    ASSERT_GT(n, 0u);
    for (std::size_t k = 0; k < n; ++k)
      EXPECT_LE((a.leader_controls[k].vec() - b.leader_controls[k].vec()).norm(), 0.1)
          << "start " << s.px << "," << s.py << " step " << k;
  }
}

TEST(RunGuidance, AdversarialModelFailsGracefully) {
  const Environment env = test::default_env();
  KoopmanModel m = random_model(4);
  m.A.setZero();
  m.B1.setZero();
  m.B2.setZero();
  RecedingHorizonPlanner planner(env, LeaderWeights{}, koopman(m), 0.2);
  GuidanceOptions go;
  go.max_steps = 60;
  const RobotState s{0.5, 3, 0.785};
  GuidanceEpisode e;
  ASSERT_NO_THROW(e = run_guidance({s, s}, planner, env, FollowerWeights{}, GridSpec{}, 0.2, go));
  EXPECT_NE(e.outcome, EpisodeOutcome::Reached);
  expect_valid_episode(e, env, go.feas_tol);
}

TEST(Episode, SaveLoadRoundTrip) {
  const Environment env = test::default_env();
  ModelBasedPlanner planner(env, LeaderWeights{}, FollowerWeights{}, 0.2);
  GuidanceOptions go;
  go.max_steps = 5;
  const RobotState s{5.5, 0, 1.57};
  const GuidanceEpisode e = run_guidance({s, s}, planner, env, FollowerWeights{}, GridSpec{}, 0.2, go);
  ASSERT_EQ(e.steps(), 5u);
  EXPECT_EQ(e.outcome, EpisodeOutcome::MaxSteps);
  const auto dir = test::scratch_dir("episode");
  save_episode(e, dir / "e.jsonl");
  const GuidanceEpisode back = load_episode(dir / "e.jsonl");
  EXPECT_EQ(back.planner, "foc");
  EXPECT_EQ(back.states, e.states);
  EXPECT_EQ(back.leader_controls, e.leader_controls);
  EXPECT_EQ(back.follower_controls, e.follower_controls);
  EXPECT_EQ(back.planning_times, e.planning_times);
  EXPECT_EQ(back.modes, e.modes);
  EXPECT_EQ(back.flagged, e.flagged);
  EXPECT_EQ(back.outcome, e.outcome);
}

TEST(Episode, InconsistentLengthsRejected) {
  GuidanceEpisode e;
  e.states.resize(3);
  e.leader_controls.resize(1);
  EXPECT_THROW(e.check(), ValidationError);
}
