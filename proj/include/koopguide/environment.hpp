#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "koopguide/dynamics.hpp"

namespace koopguide {

enum class NormOrder { L1, L2, LInf };

/// Norm ball {p : ||shape (p - center)||_norm <= radius}.
struct Obstacle {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  Eigen::Matrix2d shape_matrix = Eigen::Matrix2d::Identity();
  double radius = 1.0;
  NormOrder norm_order = NormOrder::L2;
};

struct Bounds {
  double xmin = 0.0;
  double xmax = 10.0;
  double ymin = 0.0;
  double ymax = 10.0;

  bool contains(const Eigen::Vector2d& p) const {
    return p.x() >= xmin && p.x() <= xmax && p.y() >= ymin && p.y() <= ymax;
  }
};

/// Workspace, obstacle set and common destination. Immutable after loading.
struct Environment {
  Bounds bounds;
  std::vector<Obstacle> obstacles;
  RobotState destination;

  /// Strictly outside every obstacle.
  bool is_safe(const Eigen::Vector2d& p) const;
  /// Smallest clearance over all obstacles (+inf without obstacles).
  double min_clearance(const Eigen::Vector2d& p) const;
};

/// ||shape (p - center)||_l - radius. Positive means outside.
double obstacle_clearance(const Obstacle& ob, const Eigen::Vector2d& p);

/// Gradient of obstacle_clearance in p. For the polyhedral norms this is the
/// gradient of the active piece; zero at the exact center.
Eigen::Vector2d clearance_gradient(const Obstacle& ob, const Eigen::Vector2d& p);

/// Hessian in p. Zero for L1 and LInf (piecewise linear).
Eigen::Matrix2d clearance_hessian(const Obstacle& ob, const Eigen::Vector2d& p);

/// -(1/mu) * sum_j log(c_j(p)). Throws DomainError if any c_j(p) <= 0.
double barrier_penalty(const Environment& env, const Eigen::Vector2d& p,
                       double mu);
Eigen::Vector2d barrier_gradient(const Environment& env,
                                 const Eigen::Vector2d& p, double mu);
Eigen::Matrix2d barrier_hessian(const Environment& env,
                                const Eigen::Vector2d& p, double mu);

/// Throws ValidationError naming the violated invariant.
void validate(const Environment& env);

Environment environment_from_json(const nlohmann::json& j);
nlohmann::json environment_to_json(const Environment& env);

/// Reads and validates an environment file. Throws ParseError or
/// ValidationError.
Environment load_environment(const std::filesystem::path& path);

/// Stable 64-bit FNV-1a hash of the canonical JSON form.
std::uint64_t environment_hash(const Environment& env);

std::string to_string(NormOrder n);
NormOrder norm_order_from_string(const std::string& s);

}  // namespace koopguide
