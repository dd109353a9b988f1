#include "osteovox/voxel_grid.hpp"

#include <algorithm>

#include "osteovox/errors.hpp"

namespace osteovox {

std::string to_string(const Dims& d) {
  return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

VoxelGrid::VoxelGrid(Dims dims, unsigned n_phases, Label fill)
    : VoxelGrid(dims, std::vector<Label>(dims.count(), fill), n_phases) {}

VoxelGrid::VoxelGrid(Dims dims, std::vector<Label> data, unsigned n_phases)
    : dims_(dims), n_phases_(n_phases), data_(std::move(data)) {
  if (dims.nx == 0 || dims.ny == 0 || dims.nz == 0) {
    throw DomainError("voxel grid dimensions must be positive, got " + to_string(dims));
  }
  if (n_phases < 1 || n_phases > 256) {
    throw DomainError("phase count must lie in [1, 256], got " + std::to_string(n_phases));
  }
  if (data_.size() != dims.count()) {
    throw ShapeError("voxel data length " + std::to_string(data_.size()) + " does not match dims " +
                     to_string(dims));
  }
  auto bad = std::find_if(data_.begin(), data_.end(), [&](Label v) { return v >= n_phases_; });
  if (bad != data_.end()) {
    throw DomainError("label " + std::to_string(*bad) + " at offset " +
                      std::to_string(bad - data_.begin()) + " exceeds phase count " +
                      std::to_string(n_phases_));
  }
}

Voxel VoxelGrid::coords(std::size_t offset) const {
  const std::size_t x = offset % dims_.nx;
  const std::size_t rest = offset / dims_.nx;
  return {static_cast<int>(x), static_cast<int>(rest % dims_.ny),
          static_cast<int>(rest / dims_.ny)};
}

void VoxelGrid::set(std::size_t i, Label v) {
  if (v >= n_phases_) {
    throw DomainError("label " + std::to_string(v) + " exceeds phase count " +
                      std::to_string(n_phases_));
  }
  data_[i] = v;
}

std::size_t VoxelGrid::count(Label phase) const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), phase));
}

double volume_fraction(const VoxelGrid& grid, Label phase) {
  if (phase >= grid.n_phases()) {
    throw DomainError("phase " + std::to_string(phase) + " is not below the phase count " +
                      std::to_string(grid.n_phases()));
  }
  return static_cast<double>(grid.count(phase)) / static_cast<double>(grid.size());
}

VoxelGrid resize_nearest(const VoxelGrid& grid, Dims new_dims) {
  if (new_dims.count() == 0) {
    throw DomainError("resize target dimensions must be positive, got " + to_string(new_dims));
  }
  const Dims& src = grid.dims();
  auto index_map = [](std::size_t from, std::size_t to) {
    std::vector<std::size_t> map(to);
    for (std::size_t i = 0; i < to; ++i) {
      // floor((i + 0.5) * from / to) in exact integer arithmetic
      map[i] = std::min(from - 1, ((2 * i + 1) * from) / (2 * to));
    }
    return map;
  };
  const auto mx = index_map(src.nx, new_dims.nx);
  const auto my = index_map(src.ny, new_dims.ny);
  const auto mz = index_map(src.nz, new_dims.nz);

  std::vector<Label> out(new_dims.count());
  std::size_t o = 0;
  for (std::size_t z = 0; z < new_dims.nz; ++z) {
    for (std::size_t y = 0; y < new_dims.ny; ++y) {
      const std::size_t row = grid.offset(0, my[y], mz[z]);
      for (std::size_t x = 0; x < new_dims.nx; ++x) out[o++] = grid[row + mx[x]];
    }
  }
  return VoxelGrid(new_dims, std::move(out), grid.n_phases());
}

}  // namespace osteovox
