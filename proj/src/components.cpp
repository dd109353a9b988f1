#include "osteovox/components.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <numeric>

#include "osteovox/errors.hpp"

namespace osteovox {

namespace {

std::vector<std::array<int, 3>> neighbour_offsets(Connectivity connectivity) {
  std::vector<std::array<int, 3>> offsets;
  for (int dz = -1; dz <= 1; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (manhattan == 0) continue;
        if (connectivity == Connectivity::Face && manhattan != 1) continue;
        offsets.push_back({dx, dy, dz});
      }
    }
  }
  return offsets;
}

}  // namespace

ComponentLabeling connected_components(const VoxelGrid& grid, Label phase,
                                       Connectivity connectivity) {
  if (phase >= grid.n_phases()) {
    throw DomainError("phase " + std::to_string(phase) + " is not below the phase count");
  }
  const auto offsets = neighbour_offsets(connectivity);
  const std::size_t n = grid.size();

  // Breadth-first flood fill in raster order of first encounter.
  std::vector<std::uint32_t> raw(n, 0);
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> queue;
  queue.reserve(1024);
  for (std::size_t start = 0; start < n; ++start) {
    if (grid[start] != phase || raw[start] != 0) continue;
    const auto id = static_cast<std::uint32_t>(sizes.size() + 1);
    raw[start] = id;
    queue.clear();
    queue.push_back(start);
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const Voxel v = grid.coords(queue[head]);
      for (const auto& d : offsets) {
        const int x = v.x + d[0], y = v.y + d[1], z = v.z + d[2];
        if (!grid.contains(x, y, z)) continue;
        const std::size_t o = grid.offset(x, y, z);
        if (grid[o] == phase && raw[o] == 0) {
          raw[o] = id;
          queue.push_back(o);
        }
      }
    }
    sizes.push_back(queue.size());
  }

  // Relabel so that ids follow decreasing size; stable sort keeps raster order on ties.
  std::vector<std::uint32_t> order(sizes.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return sizes[a] > sizes[b]; });
  std::vector<std::uint32_t> remap(sizes.size() + 1, 0);
  ComponentLabeling out;
  out.component_sizes.reserve(sizes.size());
  for (std::uint32_t rank = 0; rank < order.size(); ++rank) {
    remap[order[rank] + 1] = rank + 1;
    out.component_sizes.push_back(sizes[order[rank]]);
  }
  out.labels.resize(n);
  std::transform(raw.begin(), raw.end(), out.labels.begin(),
                 [&](std::uint32_t id) { return remap[id]; });
  return out;
}

double largest_component_fraction(const VoxelGrid& grid, Label phase, Connectivity connectivity) {
  const auto cc = connected_components(grid, phase, connectivity);
  if (cc.component_sizes.empty()) {
    throw DomainError("phase " + std::to_string(phase) + " has no voxels");
  }
  const std::size_t total =
      std::accumulate(cc.component_sizes.begin(), cc.component_sizes.end(), std::size_t{0});
  return static_cast<double>(cc.component_sizes.front()) / static_cast<double>(total);
}

}  // namespace osteovox
