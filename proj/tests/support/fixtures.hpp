#pragma once

// Small on-disk datasets of generated and degraded microstructures.

#include <filesystem>
#include <string>
#include <vector>

#include "osteovox/dataset.hpp"
#include "osteovox/degradation.hpp"
#include "osteovox/evolution_io.hpp"
#include "osteovox/hetmigen.hpp"
#include "osteovox/random.hpp"

namespace fixture {

namespace fs = std::filesystem;

inline fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("osteovox_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline osteovox::hetmigen::GenerationParams clustered_row(std::int64_t id, double vf) {
  osteovox::hetmigen::GenerationParams p;
  p.id = id;
  p.n_phases = 1;
  p.target_vf = {vf};
  p.n_initial_seeds = 10;
  p.seed_increment = 5;
  p.seed_frequency = 3;
  p.proximity_radius = {2};
  p.cluster_at_end = {true};
  p.growth_decay = {0.02};
  p.growth_thresholds = {0.5};
  return p;
}

/// Writes `n` sequences of `months` + 1 frames at side^3 into `dir` and
/// returns their paths. Files that already exist are reused.
inline std::vector<fs::path> degraded_sequences(const fs::path& dir, std::size_t n, std::size_t side,
                                                int months, std::uint64_t seed) {
  using namespace osteovox;
  fs::create_directories(dir);
  std::mt19937_64 rng(seed);
  const double lambda = degradation::calibrate_lambda(degradation::kDefaultInitialLoss,
                                                      degradation::kDefaultTargetLoss, degradation::kMaxMonths);
  std::vector<fs::path> files;
  for (std::size_t i = 0; i < n; ++i) {
    const double vf = 0.2 + 0.3 * uniform01(rng);
    const std::string id = "s" + std::to_string(i);
    const fs::path f = dir / (id + ".ovxe");
    files.push_back(f);
    if (fs::exists(f)) continue;
    const auto g = hetmigen::generate(clustered_row(static_cast<std::int64_t>(i), vf), seed * 1000 + i,
                                      Dims{side, side, side});
    degradation::DegradationParams dp;
    dp.lambda = lambda;
    dp.months = months;
    dp.seed = seed * 1000 + i;
    auto seq = degradation::simulate(g.grid, dp);
    seq.source_id = id;
    write_evolution(seq, f);
  }
  return files;
}

}  // namespace fixture
