#include "osteovox/degradation.hpp"

#include <cmath>

#include "osteovox/errors.hpp"
#include "osteovox/random.hpp"

namespace osteovox::degradation {

void DegradationParams::validate() const {
  if (!(r0 > 0.0 && r0 < 1.0)) throw DomainError("initial loss rate must lie in (0, 1)");
  if (!(lambda >= 0.0)) throw DomainError("rate decay must be non-negative");
  if (months < 0 || months > kMaxMonths) {
    throw DomainError("months must lie in [0, " + std::to_string(kMaxMonths) + "]");
  }
}

std::vector<std::size_t> surface_voxels(const VoxelGrid& grid) {
  std::vector<std::size_t> out;
  const Dims& d = grid.dims();
  for (std::size_t z = 0; z < d.nz; ++z) {
    for (std::size_t y = 0; y < d.ny; ++y) {
      for (std::size_t x = 0; x < d.nx; ++x) {
        const std::size_t i = grid.offset(x, y, z);
        if (grid[i] != kMineral) continue;
        for (const auto& o : kFaceOffsets) {
          const int nx = int(x) + o[0], ny = int(y) + o[1], nz = int(z) + o[2];
          if (grid.contains(nx, ny, nz) && grid.at(nx, ny, nz) == kMarrow) {
            out.push_back(i);
            break;
          }
        }
      }
    }
  }
  return out;
}

StepResult degrade_step(const VoxelGrid& grid, double loss_fraction, Rng& rng, double carry) {
  if (!(loss_fraction >= 0.0 && loss_fraction < 1.0)) {
    throw DomainError("loss fraction must lie in [0, 1)");
  }
  const double wanted = loss_fraction * static_cast<double>(grid.count(kMineral)) + carry;
  const double rounded = std::floor(wanted + 0.5);
  std::size_t quota = rounded > 0.0 ? static_cast<std::size_t>(rounded) : 0;

  StepResult r{grid, 0, wanted - rounded};
  while (quota > 0) {
    auto surface = surface_voxels(r.grid);
    if (surface.empty()) break;
    const std::size_t take = std::min(quota, surface.size());
    for (std::size_t k = 0; k < take; ++k) {
      std::swap(surface[k], surface[k + uniform_index(rng, surface.size() - k)]);
      r.grid.set(surface[k], kMarrow);
    }
    quota -= take;
    r.removed += take;
  }
  return r;
}

double monthly_rate(double r0, double lambda, int month) {
  return r0 * std::exp(-lambda * static_cast<double>(month - 1));
}

double cumulative_loss(double r0, double lambda, int months) {
  double kept = 1.0;
  for (int t = 1; t <= months; ++t) kept *= 1.0 - monthly_rate(r0, lambda, t);
  return 1.0 - kept;
}

double calibrate_lambda(double r0, double target_total_loss, int months) {
  if (!(r0 > 0.0 && r0 < 1.0)) throw DomainError("initial loss rate must lie in (0, 1)");
  if (months < 1) throw DomainError("calibration needs at least one month");
  const double most = cumulative_loss(r0, 0.0, months);
  constexpr double kSlack = 1e-12;
  if (target_total_loss > most + kSlack || target_total_loss < r0 - kSlack) {
    throw DomainError("target loss " + std::to_string(target_total_loss) +
                      " is unreachable: it must lie in [" + std::to_string(r0) + ", " +
                      std::to_string(most) + "]");
  }
  if (target_total_loss >= most - kSlack) return 0.0;

  // cumulative_loss is decreasing in lambda, tending to r0.
  double lo = 0.0, hi = 1.0;
  while (cumulative_loss(r0, hi, months) > target_total_loss && hi < 1e6) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (cumulative_loss(r0, mid, months) > target_total_loss) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

EvolutionSequence simulate(const VoxelGrid& initial, const DegradationParams& params) {
  params.validate();
  if (initial.count(kMineral) == 0) {
    throw DomainError("initial microstructure has no mineral voxels");
  }
  Rng rng(params.seed);
  EvolutionSequence seq;
  seq.frames.reserve(params.months + 1);
  seq.frames.push_back(initial);
  double carry = 0.0;
  for (int t = 1; t <= params.months; ++t) {
    auto step = degrade_step(seq.frames.back(), monthly_rate(params.r0, params.lambda, t), rng,
                             carry);
    carry = step.carry;
    seq.frames.push_back(std::move(step.grid));
  }
  return seq;
}

}  // namespace osteovox::degradation
