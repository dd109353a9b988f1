#pragma once

#include <array>
#include <cstdint>

#include "osteovox/voxel_grid.hpp"

namespace osteovox {

/// One of the 48 elements of the cube's full symmetry group (signed axis
/// permutations). Index = permutation_index * 8 + flip_mask, where the
/// permutation index enumerates the 6 axis orders lexicographically and bit
/// i of the flip mask mirrors output axis i.
class SymmetryElement {
 public:
  static constexpr int kOrder = 48;

  SymmetryElement() = default;
  explicit SymmetryElement(int index);

  static SymmetryElement identity() { return SymmetryElement(0); }

  int index() const { return index_; }
  /// Output axis i reads input axis `source_axis(i)`.
  int source_axis(int i) const;
  bool flipped(int i) const { return ((index_ & 7) >> i) & 1; }

  SymmetryElement inverse() const;
  /// Element equivalent to applying `first`, then `*this`.
  SymmetryElement after(const SymmetryElement& first) const;

  friend bool operator==(const SymmetryElement&, const SymmetryElement&) = default;

 private:
  using Matrix = std::array<std::array<int, 3>, 3>;
  Matrix matrix() const;
  static SymmetryElement from_matrix(const Matrix& m);

  int index_ = 0;
};

/// Permutes the voxels of a cubic grid. Throws DomainError on non-cubic grids.
VoxelGrid apply_symmetry(const VoxelGrid& grid, const SymmetryElement& s);

}  // namespace osteovox
