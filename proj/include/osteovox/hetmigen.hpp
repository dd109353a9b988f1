#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "osteovox/voxel_grid.hpp"

namespace osteovox::hetmigen {

using Rng = std::mt19937_64;

/// One CSV row of generator controls. Column order:
///   id, n_phases, target_vf[n], n_initial_seeds, seed_increment,
///   seed_frequency, proximity_radius[n], cluster_at_end[n],
///   growth_decay[n], growth_threshold[n]
/// Per-phase vectors are indexed by phase - 1 (phase 0 is the background).
struct GenerationParams {
  std::int64_t id = 0;
  unsigned n_phases = 1;
  std::vector<double> target_vf;
  int n_initial_seeds = 0;
  int seed_increment = 0;
  int seed_frequency = 1;
  std::vector<int> proximity_radius;
  std::vector<bool> cluster_at_end;
  std::vector<double> growth_decay;
  std::vector<double> growth_thresholds;

  /// Throws DomainError when an invariant is violated.
  void validate() const;
};

std::vector<GenerationParams> parse_params_csv(std::string_view text);

struct GeneratorState {
  VoxelGrid grid;
  int iteration = 0;
  std::vector<double> current_thresholds;
  std::vector<bool> frozen;                // per phase; growth stops once the target is met
  std::vector<std::size_t> seed_shortfall;  // seeds the proximity rule could not place
  Rng rng;
};

GeneratorState initial_state(const GenerationParams& params, Dims dims, std::uint64_t seed);

/// Attempts per seed before giving up under the proximity rule.
inline constexpr int kSeedAttemptBudget = 100;

/// Places `count` seeds of every phase at uniformly drawn background voxels.
void place_seeds(GeneratorState& state, const GenerationParams& params, int count);

/// Threshold of `phase` (1-based) after `iteration` steps: theta * exp(-decay * iteration).
double decayed_threshold(const GenerationParams& params, unsigned phase, int iteration);

/// Synchronous von Neumann growth step. `quota[p]`, when given, caps how many
/// voxels phase p+1 may claim; excess successful candidates are discarded at
/// random so the phase lands exactly on its target.
void grow_step(GeneratorState& state, const GenerationParams& params,
               const std::vector<std::size_t>* quota = nullptr);

/// Keeps only the largest 6-connected component of `phase`; every other voxel
/// of the phase becomes background. Throws DomainError on an empty phase.
VoxelGrid apply_clustering(const VoxelGrid& grid, Label phase);

struct GenerationResult {
  VoxelGrid grid;
  int iterations = 0;
  bool shortfall = false;  // some phase stayed below its target
  std::vector<std::size_t> seed_shortfall;
};

inline constexpr std::size_t kDefaultSide = 150;

GenerationResult generate(const GenerationParams& params, std::uint64_t seed,
                          Dims dims = {kDefaultSide, kDefaultSide, kDefaultSide},
                          int max_iterations = -1);

}  // namespace osteovox::hetmigen
