#include "koopguide/environment.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <Eigen/LU>

#include "koopguide/errors.hpp"

namespace koopguide {

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

Eigen::Vector2d to_vec2(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 2)
    throw ParseError(std::string(what) + ": expected an array of 2 numbers");
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

}  // namespace

double obstacle_clearance(const Obstacle& ob, const Eigen::Vector2d& p) {
  const Eigen::Vector2d z = ob.shape_matrix * (p - ob.center);
  switch (ob.norm_order) {
    case NormOrder::L1:
      return z.lpNorm<1>() - ob.radius;
    case NormOrder::L2:
      return z.norm() - ob.radius;
    case NormOrder::LInf:
      return z.lpNorm<Eigen::Infinity>() - ob.radius;
  }
  return 0.0;
}

Eigen::Vector2d clearance_gradient(const Obstacle& ob,
                                   const Eigen::Vector2d& p) {
  const Eigen::Vector2d z = ob.shape_matrix * (p - ob.center);
  Eigen::Vector2d dz = Eigen::Vector2d::Zero();
  switch (ob.norm_order) {
    case NormOrder::L1:
      dz << sign(z(0)), sign(z(1));
      break;
    case NormOrder::L2: {
      const double n = z.norm();
      if (n > 0.0) dz = z / n;
      break;
    }
    case NormOrder::LInf: {
      const int k = std::abs(z(0)) >= std::abs(z(1)) ? 0 : 1;
      dz(k) = sign(z(k));
      break;
    }
  }
  return ob.shape_matrix.transpose() * dz;
}

Eigen::Matrix2d clearance_hessian(const Obstacle& ob,
                                  const Eigen::Vector2d& p) {
  if (ob.norm_order != NormOrder::L2) return Eigen::Matrix2d::Zero();
  const Eigen::Vector2d z = ob.shape_matrix * (p - ob.center);
  const double n = z.norm();
  if (n == 0.0) return Eigen::Matrix2d::Zero();
  const Eigen::Matrix2d inner =
      Eigen::Matrix2d::Identity() / n - z * z.transpose() / (n * n * n);
  return ob.shape_matrix.transpose() * inner * ob.shape_matrix;
}

bool Environment::is_safe(const Eigen::Vector2d& p) const {
  for (const auto& ob : obstacles)
    if (!(obstacle_clearance(ob, p) > 0.0)) return false;
  return true;
}

double Environment::min_clearance(const Eigen::Vector2d& p) const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& ob : obstacles) m = std::min(m, obstacle_clearance(ob, p));
  return m;
}

double barrier_penalty(const Environment& env, const Eigen::Vector2d& p,
                       double mu) {
  if (!(mu > 0.0)) throw PreconditionError("barrier_penalty: mu must be > 0");
  double sum = 0.0;
  for (const auto& ob : env.obstacles) {
    const double c = obstacle_clearance(ob, p);
    if (!(c > 0.0)) throw DomainError("barrier_penalty: non-positive clearance");
    sum += std::log(c);
  }
  return -sum / mu;
}

Eigen::Vector2d barrier_gradient(const Environment& env,
                                 const Eigen::Vector2d& p, double mu) {
  Eigen::Vector2d g = Eigen::Vector2d::Zero();
  for (const auto& ob : env.obstacles) {
    const double c = obstacle_clearance(ob, p);
    if (!(c > 0.0))
      throw DomainError("barrier_gradient: non-positive clearance");
    g -= clearance_gradient(ob, p) / (mu * c);
  }
  return g;
}

Eigen::Matrix2d barrier_hessian(const Environment& env,
                                const Eigen::Vector2d& p, double mu) {
  Eigen::Matrix2d h = Eigen::Matrix2d::Zero();
  for (const auto& ob : env.obstacles) {
    const double c = obstacle_clearance(ob, p);
    if (!(c > 0.0)) throw DomainError("barrier_hessian: non-positive clearance");
    const Eigen::Vector2d g = clearance_gradient(ob, p);
    h -= (clearance_hessian(ob, p) / c - g * g.transpose() / (c * c)) / mu;
  }
  return h;
}

void validate(const Environment& env) {
  const auto& b = env.bounds;
  if (!(b.xmin < b.xmax) || !(b.ymin < b.ymax))
    throw ValidationError("environment: bounds must satisfy min < max");
  for (std::size_t j = 0; j < env.obstacles.size(); ++j) {
    const auto& ob = env.obstacles[j];
    const std::string tag = "environment: obstacle " + std::to_string(j);
    if (!(ob.radius > 0.0)) throw ValidationError(tag + ": radius must be > 0");
    if (!ob.center.allFinite() || !ob.shape_matrix.allFinite())
      throw ValidationError(tag + ": non-finite entries");
    if (std::abs(ob.shape_matrix.determinant()) < 1e-12)
      throw ValidationError(tag + ": shape_matrix is singular");
  }
  const Eigen::Vector2d d = env.destination.position();
  if (!env.destination.vec().allFinite())
    throw ValidationError("environment: destination is not finite");
  if (!b.contains(d))
    throw ValidationError("environment: destination lies outside bounds");
  if (!env.is_safe(d))
    throw ValidationError("environment: destination is inside an obstacle");
}

std::string to_string(NormOrder n) {
  switch (n) {
    case NormOrder::L1:
      return "l1";
    case NormOrder::L2:
      return "l2";
    case NormOrder::LInf:
      return "linf";
  }
  return "l2";
}

NormOrder norm_order_from_string(const std::string& s) {
  if (s == "l1") return NormOrder::L1;
  if (s == "l2") return NormOrder::L2;
  if (s == "linf") return NormOrder::LInf;
  throw ParseError("unknown norm '" + s + "' (expected l1, l2 or linf)");
}

Environment environment_from_json(const nlohmann::json& j) {
  Environment env;
  try {
    const auto& b = j.at("bounds");
    if (!b.is_array() || b.size() != 4)
      throw ParseError("bounds: expected [xmin, xmax, ymin, ymax]");
    env.bounds = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                  b[3].get<double>()};
    const auto& d = j.at("destination");
    if (!d.is_array() || d.size() != 3)
      throw ParseError("destination: expected [x, y, theta]");
    env.destination = {d[0].get<double>(), d[1].get<double>(),
                       d[2].get<double>()};
    for (const auto& o : j.at("obstacles")) {
      Obstacle ob;
      ob.center = to_vec2(o.at("center"), "center");
      const auto& m = o.at("shape_matrix");
      if (!m.is_array() || m.size() != 4)
        throw ParseError("shape_matrix: expected 4 numbers (row-major)");
      ob.shape_matrix << m[0].get<double>(), m[1].get<double>(),
          m[2].get<double>(), m[3].get<double>();
      ob.radius = o.at("radius").get<double>();
      ob.norm_order = norm_order_from_string(o.at("norm").get<std::string>());
      env.obstacles.push_back(ob);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("environment: ") + e.what());
  }
  return env;
}

nlohmann::json environment_to_json(const Environment& env) {
  nlohmann::json j;
  j["bounds"] = {env.bounds.xmin, env.bounds.xmax, env.bounds.ymin,
                 env.bounds.ymax};
  j["destination"] = {env.destination.px, env.destination.py,
                      env.destination.theta};
  j["obstacles"] = nlohmann::json::array();
  for (const auto& ob : env.obstacles) {
    const auto& m = ob.shape_matrix;
    j["obstacles"].push_back({{"center", {ob.center.x(), ob.center.y()}},
                              {"shape_matrix", {m(0, 0), m(0, 1), m(1, 0), m(1, 1)}},
                              {"radius", ob.radius},
                              {"norm", to_string(ob.norm_order)}});
  }
  return j;
}

Environment load_environment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open environment file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  Environment env = environment_from_json(j);
  validate(env);
  return env;
}

std::uint64_t environment_hash(const Environment& env) {
  const std::string s = environment_to_json(env).dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace koopguide
