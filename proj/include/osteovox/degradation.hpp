#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "osteovox/voxel_grid.hpp"

namespace osteovox {

/// Frames of one microstructure, index t = month.
struct EvolutionSequence {
  std::vector<VoxelGrid> frames;
  std::string source_id;

  std::size_t months() const { return frames.empty() ? 0 : frames.size() - 1; }
};

namespace degradation {

using Rng = std::mt19937_64;

inline constexpr double kDefaultInitialLoss = 0.02;   // fraction of mineral lost in month 1
inline constexpr double kDefaultTargetLoss = 0.35;    // cumulative loss over three years
inline constexpr int kMaxMonths = 36;

struct DegradationParams {
  double r0 = kDefaultInitialLoss;
  double lambda = 0.0;  // monthly decay of the loss rate
  int months = kMaxMonths;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Mineral voxels with at least one face neighbour inside the grid that is
/// background. The domain boundary does not count as marrow.
std::vector<std::size_t> surface_voxels(const VoxelGrid& grid);

struct StepResult {
  VoxelGrid grid;
  std::size_t removed = 0;
  double carry = 0.0;  // fractional quota left over for the next month
};

/// Resorbs round(loss_fraction * mineral + carry) surface voxels, sampled
/// uniformly without replacement. The surface is recomputed whenever the
/// remaining quota reaches its size; resorption stops early if no surface
/// is left.
StepResult degrade_step(const VoxelGrid& grid, double loss_fraction, Rng& rng,
                        double carry = 0.0);

/// Loss rate of month t >= 1: r0 * exp(-lambda * (t - 1)).
double monthly_rate(double r0, double lambda, int month);

/// 1 - prod_{t=1..months} (1 - monthly_rate(t)).
double cumulative_loss(double r0, double lambda, int months);

/// Bisects for lambda such that cumulative_loss(r0, lambda, months) equals
/// `target_total_loss` within 1e-6. Throws DomainError when the target lies
/// outside [r0, 1 - (1 - r0)^months].
double calibrate_lambda(double r0, double target_total_loss, int months);

EvolutionSequence simulate(const VoxelGrid& initial, const DegradationParams& params);

}  // namespace degradation
}  // namespace osteovox
