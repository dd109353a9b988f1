#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace osteovox {

using Label = std::uint8_t;

inline constexpr Label kMarrow = 0;
inline constexpr Label kMineral = 1;

struct Dims {
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::size_t nz = 0;

  std::size_t count() const { return nx * ny * nz; }
  bool cubic() const { return nx == ny && ny == nz; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& d);

struct Voxel {
  int x = 0;
  int y = 0;
  int z = 0;
  friend bool operator==(const Voxel&, const Voxel&) = default;
  friend auto operator<=>(const Voxel&, const Voxel&) = default;
};

/// Dense 3D array of phase labels, x-fastest: offset = (z*ny + y)*nx + x.
///
/// Dimensions are fixed at construction. Labels may be rewritten through
/// `set`, which keeps every label below `n_phases`.
class VoxelGrid {
 public:
  VoxelGrid() = default;
  VoxelGrid(Dims dims, unsigned n_phases = 2, Label fill = kMarrow);
  VoxelGrid(Dims dims, std::vector<Label> data, unsigned n_phases = 2);

  const Dims& dims() const { return dims_; }
  unsigned n_phases() const { return n_phases_; }
  std::size_t size() const { return data_.size(); }

  std::size_t offset(std::size_t x, std::size_t y, std::size_t z) const {
    return (z * dims_.ny + y) * dims_.nx + x;
  }
  Voxel coords(std::size_t offset) const;
  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && static_cast<std::size_t>(x) < dims_.nx &&
           static_cast<std::size_t>(y) < dims_.ny && static_cast<std::size_t>(z) < dims_.nz;
  }

  Label at(std::size_t x, std::size_t y, std::size_t z) const { return data_[offset(x, y, z)]; }
  Label operator[](std::size_t i) const { return data_[i]; }
  void set(std::size_t i, Label v);
  void set(std::size_t x, std::size_t y, std::size_t z, Label v) { set(offset(x, y, z), v); }

  std::span<const Label> data() const { return data_; }

  std::size_t count(Label phase) const;

  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

 private:
  Dims dims_{};
  unsigned n_phases_ = 2;
  std::vector<Label> data_;
};

/// count(voxels == phase) / total voxels.
double volume_fraction(const VoxelGrid& grid, Label phase);

/// Nearest-neighbour label resampling; source index = floor((i + 0.5) * src / dst).
VoxelGrid resize_nearest(const VoxelGrid& grid, Dims new_dims);

/// The six face neighbours, in the order -x, +x, -y, +y, -z, +z.
inline constexpr std::array<std::array<int, 3>, 6> kFaceOffsets{{
    {-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}}};

}  // namespace osteovox
