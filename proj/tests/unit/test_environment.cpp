#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "koopguide/environment.hpp"
#include "koopguide/errors.hpp"
#include "test_util.hpp"

using namespace koopguide;

namespace {

Obstacle circle(double x, double y, double r) {
  Obstacle ob;
  ob.center = {x, y};
  ob.radius = r;
  ob.norm_order = NormOrder::L2;
  return ob;
}

}  // namespace

TEST(Clearance, CircleCenterIsMinusRadius) {
  EXPECT_DOUBLE_EQ(obstacle_clearance(circle(5, 5, 1), {5, 5}), -1.0);
}

TEST(Clearance, CircleAxisDistance) {
  EXPECT_DOUBLE_EQ(obstacle_clearance(circle(5, 5, 1), {7, 5}), 1.0);
}

TEST(Clearance, SquareBoundaryIsZero) {
  Obstacle sq;
  sq.center = {2, 2};
  sq.radius = 0.5;
  sq.norm_order = NormOrder::LInf;
  EXPECT_NEAR(obstacle_clearance(sq, {2.5, 2.1}), 0.0, 1e-15);
}

TEST(Clearance, DiamondUsesL1) {
  Obstacle d;
  d.center = {0, 0};
  d.radius = 1.0;
  d.norm_order = NormOrder::L1;
  EXPECT_DOUBLE_EQ(obstacle_clearance(d, {1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(obstacle_clearance(d, {0.5, 0.5}), 0.0);
}

TEST(Clearance, ShapeMatrixScalesAxes) {
  Obstacle r;
  r.center = {0, 0};
  r.shape_matrix << 1, 0, 0, 2;
  r.radius = 1.0;
  r.norm_order = NormOrder::LInf;
  EXPECT_DOUBLE_EQ(obstacle_clearance(r, {0, 0.5}), 0.0);
  EXPECT_DOUBLE_EQ(obstacle_clearance(r, {1, 0}), 0.0);
}

TEST(Clearance, CircleMatchesEuclideanDistanceOnRandomPoints) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-10, 10);
  const Obstacle ob = circle(1.5, -2.0, 0.7);
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Vector2d p(u(rng), u(rng));
    const double direct = std::hypot(p.x() - 1.5, p.y() + 2.0) - 0.7;
    EXPECT_NEAR(obstacle_clearance(ob, p), direct, 1e-12);
  }
}

TEST(Clearance, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3, 3);
  for (NormOrder n : {NormOrder::L1, NormOrder::L2, NormOrder::LInf}) {
    Obstacle ob;
    ob.center = {0.3, -0.2};
    ob.shape_matrix << 1.0, 0.3, -0.2, 2.0;
    ob.radius = 0.8;
    ob.norm_order = n;
    for (int i = 0; i < 200; ++i) {
      const Eigen::Vector2d p(u(rng), u(rng));
      const double h = 1e-6;
      Eigen::Vector2d fd;
      for (int k = 0; k < 2; ++k) {
        Eigen::Vector2d e = Eigen::Vector2d::Zero();
        e(k) = h;
        fd(k) = (obstacle_clearance(ob, p + e) - obstacle_clearance(ob, p - e)) / (2 * h);
      }
      const Eigen::Vector2d z = ob.shape_matrix * (p - ob.center);
      const bool near_kink = std::abs(std::abs(z.x()) - std::abs(z.y())) < 1e-4 ||
                             std::abs(z.x()) < 1e-4 || std::abs(z.y()) < 1e-4;
      if (near_kink) continue;
      EXPECT_LT(test::rel_error(clearance_gradient(ob, p), fd), 1e-6);
    }
  }
}

TEST(Barrier, UnitClearanceGivesZero) {
  Environment env = test::empty_env();
  env.obstacles.push_back(circle(0, 0, 1));
  EXPECT_NEAR(barrier_penalty(env, {2, 0}, 10.0), 0.0, 1e-15);
}

TEST(Barrier, NoObstaclesGivesZero) {
  EXPECT_EQ(barrier_penalty(test::empty_env(), {3, 4}, 10.0), 0.0);
}

TEST(Barrier, HalfClearance) {
  Environment env = test::empty_env();
  env.obstacles.push_back(circle(0, 0, 1));
  EXPECT_NEAR(barrier_penalty(env, {1.5, 0}, 2.0), -0.5 * std::log(0.5), 1e-12);
  EXPECT_NEAR(barrier_penalty(env, {1.5, 0}, 2.0), 0.3466, 1e-4);
}

TEST(Barrier, NonPositiveClearanceIsDomainError) {
  Environment env = test::empty_env();
  env.obstacles.push_back(circle(0, 0, 1));
  EXPECT_THROW(barrier_penalty(env, {1.0, 0}, 10.0), DomainError);
  EXPECT_THROW(barrier_penalty(env, {0.5, 0}, 10.0), DomainError);
  EXPECT_THROW(barrier_penalty(env, {2.0, 0}, 0.0), PreconditionError);
}

TEST(Barrier, GrowsMonotonicallyAsClearanceShrinks) {
  Environment env = test::empty_env();
  env.obstacles.push_back(circle(0, 0, 1));
  double prev = -1e300;
  for (double c = 1.0; c > 1e-12; c *= 0.5) {
    const double b = barrier_penalty(env, {1.0 + c, 0}, 10.0);
    EXPECT_GT(b, prev);
    prev = b;
  }
  EXPECT_GT(prev, 2.5);
}

TEST(Barrier, SmallerMuScalesMagnitudeUp) {
  Environment env = test::empty_env();
  env.obstacles.push_back(circle(0, 0, 1));
  env.obstacles.push_back(circle(6, 0, 1));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector2d near(1.0 + u(rng), 0.0);
    EXPECT_GE(std::abs(barrier_penalty(env, near, 2.0)),
              std::abs(barrier_penalty(env, near, 10.0)));
  }
}

TEST(Barrier, GradientAndHessianMatchFiniteDifferences) {
  const Environment env = test::default_env();
  std::mt19937_64 rng(6);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector2d p = test::random_state(rng, env, 0.05).position();
    const double h = 1e-6;
    Eigen::Vector2d fd;
    Eigen::Matrix2d fdh;
    for (int k = 0; k < 2; ++k) {
      Eigen::Vector2d e = Eigen::Vector2d::Zero();
      e(k) = h;
      fd(k) = (barrier_penalty(env, p + e, 10) - barrier_penalty(env, p - e, 10)) / (2 * h);
      fdh.col(k) = (barrier_gradient(env, p + e, 10) - barrier_gradient(env, p - e, 10)) / (2 * h);
    }
    EXPECT_LT(test::rel_error(barrier_gradient(env, p, 10), fd), 1e-5);
    EXPECT_LT(test::rel_error(barrier_hessian(env, p, 10), fdh), 1e-4);
  }
}

TEST(EnvironmentFile, DefaultHasFourObstacles) {
  const Environment env = test::default_env();
  EXPECT_EQ(env.obstacles.size(), 4u);
  EXPECT_EQ(env.bounds.xmin, 0.0);
  EXPECT_EQ(env.bounds.xmax, 10.0);
  EXPECT_EQ(env.bounds.ymin, 0.0);
  EXPECT_EQ(env.bounds.ymax, 10.0);
  int l1 = 0, l2 = 0, linf = 0;
  for (const auto& ob : env.obstacles) {
    l1 += ob.norm_order == NormOrder::L1;
    l2 += ob.norm_order == NormOrder::L2;
    linf += ob.norm_order == NormOrder::LInf;
  }
  EXPECT_EQ(l1, 1);
  EXPECT_EQ(l2, 2);
  EXPECT_EQ(linf, 1);
}

TEST(EnvironmentFile, NegativeRadiusIsValidationError) {
  auto j = environment_to_json(test::default_env());
  j["obstacles"][0]["radius"] = -1.0;
  const auto dir = test::scratch_dir("env");
  std::ofstream(dir / "bad.json") << j.dump();
  EXPECT_THROW(load_environment(dir / "bad.json"), ValidationError);
}

TEST(EnvironmentFile, SingularShapeIsValidationError) {
  Environment env = test::empty_env();
  Obstacle ob;
  ob.shape_matrix << 1, 2, 2, 4;
  env.obstacles.push_back(ob);
  EXPECT_THROW(validate(env), ValidationError);
}

TEST(EnvironmentFile, DestinationInsideObstacleIsValidationError) {
  Environment env = test::empty_env();
  env.obstacles.push_back(circle(9, 9, 1));
  EXPECT_THROW(validate(env), ValidationError);
  env.obstacles.clear();
  env.destination = {11, 5, 0};
  EXPECT_THROW(validate(env), ValidationError);
}

TEST(EnvironmentFile, ZeroObstaclesIsLegal) {
  auto j = environment_to_json(test::default_env());
  j["obstacles"] = nlohmann::json::array();
  const auto dir = test::scratch_dir("env");
  std::ofstream(dir / "empty.json") << j.dump();
  EXPECT_EQ(load_environment(dir / "empty.json").obstacles.size(), 0u);
}

TEST(EnvironmentFile, MalformedIsParseError) {
  const auto dir = test::scratch_dir("env");
  std::ofstream(dir / "trunc.json") << "{\"bounds\": [0, 10, 0";
  EXPECT_THROW(load_environment(dir / "trunc.json"), ParseError);
  std::ofstream(dir / "norm.json")
      << R"({"bounds":[0,10,0,10],"destination":[9,9,0],"obstacles":[{"center":[1,1],"shape_matrix":[1,0,0,1],"radius":1,"norm":"l3"}]})";
  EXPECT_THROW(load_environment(dir / "norm.json"), ParseError);
  EXPECT_THROW(load_environment(dir / "missing.json"), ParseError);
}

TEST(EnvironmentFile, JsonRoundTripAndHash) {
  const Environment env = test::default_env();
  const Environment back = environment_from_json(environment_to_json(env));
  EXPECT_EQ(environment_hash(env), environment_hash(back));
  Environment moved = env;
  moved.obstacles[0].radius += 1e-9;
  EXPECT_NE(environment_hash(env), environment_hash(moved));
}
