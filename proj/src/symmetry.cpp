#include "osteovox/symmetry.hpp"

#include <string>

#include "osteovox/errors.hpp"

namespace osteovox {

namespace {

constexpr std::array<std::array<int, 3>, 6> kPermutations{{
    {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};

}  // namespace

SymmetryElement::SymmetryElement(int index) : index_(index) {
  if (index < 0 || index >= kOrder) {
    throw DomainError("symmetry index must lie in [0, 48), got " + std::to_string(index));
  }
}

int SymmetryElement::source_axis(int i) const { return kPermutations[index_ / 8][i]; }

// Signed permutation acting on centred coordinates: out = M * in.
SymmetryElement::Matrix SymmetryElement::matrix() const {
  Matrix m{};
  for (int i = 0; i < 3; ++i) m[i][source_axis(i)] = flipped(i) ? -1 : 1;
  return m;
}

SymmetryElement SymmetryElement::from_matrix(const Matrix& m) {
  std::array<int, 3> perm{};
  int flips = 0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (m[i][j] == 0) continue;
      perm[i] = j;
      if (m[i][j] < 0) flips |= 1 << i;
    }
  }
  for (int p = 0; p < 6; ++p) {
    if (kPermutations[p] == perm) return SymmetryElement(p * 8 + flips);
  }
  throw DomainError("matrix is not a signed permutation");
}

SymmetryElement SymmetryElement::inverse() const {
  const Matrix m = matrix();
  Matrix t{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i][j] = m[j][i];
  return from_matrix(t);
}

SymmetryElement SymmetryElement::after(const SymmetryElement& first) const {
  const Matrix a = matrix();
  const Matrix b = first.matrix();
  Matrix c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return from_matrix(c);
}

VoxelGrid apply_symmetry(const VoxelGrid& grid, const SymmetryElement& s) {
  const Dims& d = grid.dims();
  if (!d.cubic()) {
    throw DomainError("symmetry transforms need a cubic grid, got " + to_string(d));
  }
  const std::size_t n = d.nx;
  const std::size_t last = n - 1;
  std::array<std::size_t, 3> stride{1, n, n * n};
  // out[o] = in[sum_i src_i * stride[source_axis(i)]], src_i = flip ? last - o_i : o_i
  std::array<std::size_t, 3> in_stride{};
  for (int i = 0; i < 3; ++i) in_stride[i] = stride[s.source_axis(i)];

  std::vector<Label> out(grid.size());
  const auto in = grid.data();
  std::size_t o = 0;
  for (std::size_t z = 0; z < n; ++z) {
    const std::size_t sz = (s.flipped(2) ? last - z : z) * in_stride[2];
    for (std::size_t y = 0; y < n; ++y) {
      const std::size_t sy = sz + (s.flipped(1) ? last - y : y) * in_stride[1];
      for (std::size_t x = 0; x < n; ++x) {
        out[o++] = in[sy + (s.flipped(0) ? last - x : x) * in_stride[0]];
      }
    }
  }
  return VoxelGrid(d, std::move(out), grid.n_phases());
}

}  // namespace osteovox
