#include "osteovox/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "osteovox/errors.hpp"

namespace osteovox {

namespace {

void require_same_dims(const VoxelGrid& a, const VoxelGrid& b) {
  if (a.dims() != b.dims()) {
    throw DomainError("grid dimensions differ: " + to_string(a.dims()) + " vs " +
                      to_string(b.dims()));
  }
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) along one line.
// `f` holds squared distances at unit spacing; the result is written to `d`.
void distance_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
                 std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    // z[0] is -inf, so the envelope never empties.
    double s = 0.0;
    while (true) {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = q - v[j];
    d[q] = dq * dq + f[v[j]];
  }
}

}  // namespace

double dice(const VoxelGrid& a, const VoxelGrid& b, Label phase) {
  require_same_dims(a, b);
  std::size_t na = 0, nb = 0, both = 0;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const bool ia = da[i] == phase;
    const bool ib = db[i] == phase;
    na += ia;
    nb += ib;
    both += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::vector<double> squared_distance_transform(const VoxelGrid& grid, Label phase) {
  const Dims& d = grid.dims();
  std::vector<double> dist(grid.size());
  for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = grid[i] == phase ? 0.0 : kInf;

  const std::size_t longest = std::max({d.nx, d.ny, d.nz});
  std::vector<double> f(longest), out(longest), z(longest + 1);
  std::vector<int> v(longest);

  auto pass = [&](std::size_t len, std::size_t stride, auto&& line_starts) {
    f.resize(len);
    out.resize(len);
    for (std::size_t start : line_starts) {
      for (std::size_t i = 0; i < len; ++i) f[i] = dist[start + i * stride];
      distance_1d(f, out, v, z);
      for (std::size_t i = 0; i < len; ++i) dist[start + i * stride] = out[i];
    }
  };

  std::vector<std::size_t> starts;
  starts.clear();
  for (std::size_t zz = 0; zz < d.nz; ++zz)
    for (std::size_t y = 0; y < d.ny; ++y) starts.push_back(grid.offset(0, y, zz));
  pass(d.nx, 1, starts);

  starts.clear();
  for (std::size_t zz = 0; zz < d.nz; ++zz)
    for (std::size_t x = 0; x < d.nx; ++x) starts.push_back(grid.offset(x, 0, zz));
  pass(d.ny, d.nx, starts);

  starts.clear();
  for (std::size_t y = 0; y < d.ny; ++y)
    for (std::size_t x = 0; x < d.nx; ++x) starts.push_back(grid.offset(x, y, 0));
  pass(d.nz, d.nx * d.ny, starts);
  return dist;
}

double hausdorff(const VoxelGrid& a, const VoxelGrid& b, Label phase, HausdorffMode mode) {
  require_same_dims(a, b);
  if (a.count(phase) == 0 || b.count(phase) == 0) {
    throw DomainError("Hausdorff distance needs both phase sets to be nonempty");
  }
  const auto to_b = squared_distance_transform(b, phase);
  const auto to_a = squared_distance_transform(a, phase);

  struct Directed {
    double max_sq = 0.0;
    double sum = 0.0;
    std::size_t n = 0;
  };
  auto directed = [&](const VoxelGrid& from, const std::vector<double>& to) {
    Directed r;
    for (std::size_t i = 0; i < from.size(); ++i) {
      if (from[i] != phase) continue;
      r.max_sq = std::max(r.max_sq, to[i]);
      r.sum += std::sqrt(to[i]);
      ++r.n;
    }
    return r;
  };
  const Directed ab = directed(a, to_b);
  const Directed ba = directed(b, to_a);
  if (mode == HausdorffMode::Max) return std::sqrt(std::max(ab.max_sq, ba.max_sq));
  return 0.5 * (ab.sum / static_cast<double>(ab.n) + ba.sum / static_cast<double>(ba.n));
}

}  // namespace osteovox
