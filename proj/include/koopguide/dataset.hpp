#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "koopguide/environment.hpp"
#include "koopguide/follower.hpp"
#include "koopguide/leader_cost.hpp"
#include "koopguide/trajectory.hpp"

namespace koopguide {

/// Leader behaviour during data collection.
///  random:   controls uniform in the admissible box, resampled every step
///  waypoint: proportional steering toward random safe waypoints
///  mixed:    per-trajectory coin flip between random and waypoint
///  foc:      the model-based planner
enum class LeaderPolicy { Random, Waypoint, Mixed, Foc };

std::string to_string(LeaderPolicy p);
LeaderPolicy leader_policy_from_string(const std::string& s);

struct DatasetMetadata {
  Environment env;
  std::uint64_t env_hash = 0;
  std::uint64_t seed = 0;
  LeaderPolicy policy = LeaderPolicy::Mixed;
  int steps = 0;   // S
  int count = 0;   // N
  FollowerWeights follower_weights;
  GridSpec grid;
  double dt = kDefaultDt;
};

struct InteractionDataset {
  DatasetMetadata meta;
  std::vector<Trajectory> trajectories;

  std::size_t tuple_count() const;
};

struct GenerationOptions {
  FollowerWeights follower_weights;
  GridSpec grid;
  double dt = kDefaultDt;
  /// Only used by the foc policy.
  LeaderWeights leader_weights;
  int max_attempts = 10000;
};

/// Seed of trajectory `index`, independent of how many others are drawn.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Throws InfeasibleError when a strictly safe start cannot be sampled
/// within opts.max_attempts.
InteractionDataset generate_dataset(const Environment& env, int n, int s,
                                    LeaderPolicy policy, std::uint64_t seed,
                                    const GenerationOptions& opts = {});

/// Checks dynamics consistency, best-response consistency, control bounds
/// and strict safety of every tuple. Throws ValidationError naming the
/// trajectory and step.
void validate_dataset(const InteractionDataset& d);

/// Partition at trajectory granularity. Throws PreconditionError when either
/// side would be empty.
std::pair<InteractionDataset, InteractionDataset> split_dataset(
    const InteractionDataset& d, double train_fraction, std::uint64_t seed);

void save_dataset(const InteractionDataset& d, const std::filesystem::path& path);
/// Parses and revalidates.
InteractionDataset load_dataset(const std::filesystem::path& path);

}  // namespace koopguide
