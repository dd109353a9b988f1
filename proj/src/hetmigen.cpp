#include "osteovox/hetmigen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <string>

#include "osteovox/components.hpp"
#include "osteovox/errors.hpp"
#include "osteovox/random.hpp"

namespace osteovox::hetmigen {

void GenerationParams::validate() const {
  const auto np = static_cast<std::size_t>(n_phases);
  if (n_phases < 1 || n_phases > 255) throw DomainError("phase count must lie in [1, 255]");
  if (target_vf.size() != np || proximity_radius.size() != np || cluster_at_end.size() != np ||
      growth_decay.size() != np || growth_thresholds.size() != np) {
    throw DomainError("per-phase parameter lists must have one entry per phase");
  }
  double sum = 0.0;
  for (double vf : target_vf) {
    if (!(vf > 0.0 && vf < 1.0)) throw DomainError("target volume fraction must lie in (0, 1)");
    sum += vf;
  }
  if (!(sum < 1.0)) throw DomainError("target volume fractions must sum to less than 1");
  if (n_initial_seeds < 0) throw DomainError("initial seed count must be non-negative");
  if (seed_frequency < 1) throw DomainError("seed frequency must be at least 1");
  for (int r : proximity_radius)
    if (r < 0) throw DomainError("proximity radius must be non-negative");
  for (double d : growth_decay)
    if (!(d >= 0.0)) throw DomainError("growth decay must be non-negative");
  for (double t : growth_thresholds)
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("growth threshold must lie in [0, 1]");
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view f = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) f.remove_suffix(1);
    fields.push_back(f);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

class RowReader {
 public:
  RowReader(std::vector<std::string_view> fields, std::size_t line)
      : fields_(std::move(fields)), line_(line) {}

  template <class T>
  T next(const char* what) {
    if (pos_ >= fields_.size()) {
      throw ParseError(std::string("missing field '") + what + "'", line_, pos_ + 1);
    }
    const std::string_view f = fields_[pos_++];
    T value{};
    const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), value);
    if (ec != std::errc{} || ptr != f.data() + f.size() || f.empty()) {
      throw ParseError(std::string("malformed ") + what + " '" + std::string(f) + "'", line_,
                       pos_);
    }
    return value;
  }

  void check(bool ok, const std::string& message) const {
    if (!ok) throw ParseError(message, line_, pos_);
  }

  void finish() const {
    if (pos_ != fields_.size()) {
      throw ParseError("unexpected extra field", line_, pos_ + 1);
    }
  }

 private:
  std::vector<std::string_view> fields_;
  std::size_t line_;
  std::size_t pos_ = 0;
};

GenerationParams parse_row(std::string_view line, std::size_t line_no) {
  RowReader r(split_fields(line), line_no);
  GenerationParams p;
  p.id = r.next<std::int64_t>("id");
  const int np = r.next<int>("phase count");
  r.check(np >= 1 && np <= 255, "phase count must lie in [1, 255]");
  p.n_phases = static_cast<unsigned>(np);
  double sum = 0.0;
  for (int i = 0; i < np; ++i) {
    const double vf = r.next<double>("volume fraction");
    r.check(vf > 0.0 && vf < 1.0, "volume fraction must lie in (0, 1)");
    sum += vf;
    r.check(sum < 1.0, "volume fractions must sum to less than 1");
    p.target_vf.push_back(vf);
  }
  p.n_initial_seeds = r.next<int>("initial seed count");
  r.check(p.n_initial_seeds >= 0, "initial seed count must be non-negative");
  p.seed_increment = r.next<int>("seed increment");
  p.seed_frequency = r.next<int>("seed frequency");
  r.check(p.seed_frequency >= 1, "seed frequency must be at least 1");
  for (int i = 0; i < np; ++i) {
    const int radius = r.next<int>("proximity radius");
    r.check(radius >= 0, "proximity radius must be non-negative");
    p.proximity_radius.push_back(radius);
  }
  for (int i = 0; i < np; ++i) {
    const int flag = r.next<int>("clustering flag");
    r.check(flag == 0 || flag == 1, "clustering flag must be 0 or 1");
    p.cluster_at_end.push_back(flag == 1);
  }
  for (int i = 0; i < np; ++i) {
    const double decay = r.next<double>("growth decay");
    r.check(decay >= 0.0, "growth decay must be non-negative");
    p.growth_decay.push_back(decay);
  }
  for (int i = 0; i < np; ++i) {
    const double t = r.next<double>("growth threshold");
    r.check(t >= 0.0 && t <= 1.0, "growth threshold must lie in [0, 1]");
    p.growth_thresholds.push_back(t);
  }
  r.finish();
  return p;
}

}  // namespace

std::vector<GenerationParams> parse_params_csv(std::string_view text) {
  std::vector<GenerationParams> rows;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string_view::npos || line[first] == '#') continue;
    rows.push_back(parse_row(line, line_no));
  }
  return rows;
}

double decayed_threshold(const GenerationParams& params, unsigned phase, int iteration) {
  const double t = params.growth_thresholds[phase - 1] *
                   std::exp(-params.growth_decay[phase - 1] * static_cast<double>(iteration));
  return std::clamp(t, 0.0, 1.0);
}

GeneratorState initial_state(const GenerationParams& params, Dims dims, std::uint64_t seed) {
  params.validate();
  GeneratorState s{VoxelGrid(dims, params.n_phases + 1), 0, {}, {}, {}, Rng(seed)};
  for (unsigned p = 1; p <= params.n_phases; ++p) {
    s.current_thresholds.push_back(decayed_threshold(params, p, 0));
  }
  s.frozen.assign(params.n_phases, false);
  s.seed_shortfall.assign(params.n_phases, 0);
  return s;
}

namespace {

bool phase_within(const VoxelGrid& grid, Voxel c, int radius, Label phase) {
  const Dims& d = grid.dims();
  const int x0 = std::max(0, c.x - radius), x1 = std::min<int>(d.nx - 1, c.x + radius);
  const int y0 = std::max(0, c.y - radius), y1 = std::min<int>(d.ny - 1, c.y + radius);
  const int z0 = std::max(0, c.z - radius), z1 = std::min<int>(d.nz - 1, c.z + radius);
  for (int z = z0; z <= z1; ++z)
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (grid.at(x, y, z) == phase) return true;
  return false;
}

}  // namespace

void place_seeds(GeneratorState& state, const GenerationParams& params, int count) {
  if (count <= 0) return;
  VoxelGrid& grid = state.grid;
  for (unsigned p = 1; p <= params.n_phases; ++p) {
    if (state.frozen[p - 1]) continue;
    const int radius = params.proximity_radius[p - 1];
    const auto phase = static_cast<Label>(p);
    for (int seed = 0; seed < count; ++seed) {
      bool placed = false;
      for (int attempt = 0; attempt < kSeedAttemptBudget && !placed; ++attempt) {
        const std::size_t i = uniform_index(state.rng, grid.size());
        if (grid[i] != kMarrow) continue;
        if (radius > 0 && phase_within(grid, grid.coords(i), radius, phase)) continue;
        grid.set(i, phase);
        placed = true;
      }
      if (!placed) ++state.seed_shortfall[p - 1];
    }
  }
}

void grow_step(GeneratorState& state, const GenerationParams& params,
               const std::vector<std::size_t>* quota) {
  const VoxelGrid& grid = state.grid;
  const Dims& d = grid.dims();
  const unsigned np = params.n_phases;
  std::vector<std::vector<std::size_t>> claims(np);
  std::vector<bool> touching(np + 1);

  for (std::size_t z = 0; z < d.nz; ++z) {
    for (std::size_t y = 0; y < d.ny; ++y) {
      for (std::size_t x = 0; x < d.nx; ++x) {
        const std::size_t i = grid.offset(x, y, z);
        if (grid[i] != kMarrow) continue;
        std::fill(touching.begin(), touching.end(), false);
        bool any = false;
        for (const auto& o : kFaceOffsets) {
          const int nx = int(x) + o[0], ny = int(y) + o[1], nz = int(z) + o[2];
          if (!grid.contains(nx, ny, nz)) continue;
          const Label l = grid.at(nx, ny, nz);
          if (l != kMarrow) {
            touching[l] = true;
            any = true;
          }
        }
        if (!any) continue;
        // Independent draws per touching phase; the lowest phase index wins.
        unsigned winner = 0;
        for (unsigned p = 1; p <= np; ++p) {
          if (!touching[p] || state.frozen[p - 1]) continue;
          const bool success = uniform01(state.rng) < state.current_thresholds[p - 1];
          if (success && winner == 0) winner = p;
        }
        if (winner != 0) claims[winner - 1].push_back(i);
      }
    }
  }

  for (unsigned p = 1; p <= np; ++p) {
    auto& c = claims[p - 1];
    if (quota != nullptr && c.size() > (*quota)[p - 1]) {
      const std::size_t keep = (*quota)[p - 1];
      for (std::size_t k = 0; k < keep; ++k) {
        std::swap(c[k], c[k + uniform_index(state.rng, c.size() - k)]);
      }
      c.resize(keep);
    }
    for (std::size_t i : c) state.grid.set(i, static_cast<Label>(p));
  }

  ++state.iteration;
  for (unsigned p = 1; p <= np; ++p) {
    state.current_thresholds[p - 1] = decayed_threshold(params, p, state.iteration);
  }
}

VoxelGrid apply_clustering(const VoxelGrid& grid, Label phase) {
  const auto cc = connected_components(grid, phase, Connectivity::Face);
  if (cc.component_sizes.empty()) {
    throw DomainError("cannot cluster phase " + std::to_string(phase) + ": it has no voxels");
  }
  std::vector<Label> out(grid.data().begin(), grid.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] == phase && cc.labels[i] != 1) out[i] = kMarrow;
  }
  return VoxelGrid(grid.dims(), std::move(out), grid.n_phases());
}

namespace {

std::vector<std::size_t> target_counts(const GenerationParams& params, const VoxelGrid& grid) {
  std::vector<std::size_t> t;
  for (double vf : params.target_vf) {
    t.push_back(static_cast<std::size_t>(std::llround(vf * static_cast<double>(grid.size()))));
  }
  return t;
}

// Grows unfrozen phases until each meets its target or the step budget runs
// out. Seeds are added on the configured cadence when `add_seeds` is set.
void grow_to_targets(GeneratorState& state, const GenerationParams& params,
                     const std::vector<std::size_t>& targets, int max_steps, bool add_seeds,
                     int& seed_events) {
  const unsigned np = params.n_phases;
  std::vector<std::size_t> quota(np);
  auto refresh = [&] {
    bool all_frozen = true;
    for (unsigned p = 1; p <= np; ++p) {
      const std::size_t have = state.grid.count(static_cast<Label>(p));
      if (have >= targets[p - 1]) state.frozen[p - 1] = true;
      quota[p - 1] = have >= targets[p - 1] ? 0 : targets[p - 1] - have;
      all_frozen = all_frozen && state.frozen[p - 1];
    }
    return all_frozen;
  };
  for (int step = 0; step < max_steps; ++step) {
    if (refresh()) return;
    grow_step(state, params, &quota);
    if (add_seeds && state.iteration % params.seed_frequency == 0) {
      ++seed_events;
      const long long n =
          static_cast<long long>(params.n_initial_seeds) +
          static_cast<long long>(seed_events) * params.seed_increment;
      if (n > 0) {
        refresh();
        place_seeds(state, params, static_cast<int>(n));
      }
    }
  }
  refresh();
}

}  // namespace

GenerationResult generate(const GenerationParams& params, std::uint64_t seed, Dims dims,
                          int max_iterations) {
  GeneratorState state = initial_state(params, dims, seed);
  if (max_iterations < 0) {
    max_iterations = static_cast<int>(10 * std::max({dims.nx, dims.ny, dims.nz}));
  }
  const auto targets = target_counts(params, state.grid);
  int seed_events = 0;
  place_seeds(state, params, params.n_initial_seeds);
  grow_to_targets(state, params, targets, max_iterations, true, seed_events);

  // Clustering discards detached islands; the surviving component is then
  // regrown (no new seeds, so it stays connected) back up to the target.
  bool clustered_any = false;
  for (unsigned p = 1; p <= params.n_phases; ++p) {
    const auto phase = static_cast<Label>(p);
    if (!params.cluster_at_end[p - 1] || state.grid.count(phase) == 0) continue;
    state.grid = apply_clustering(state.grid, phase);
    state.frozen[p - 1] = false;
    clustered_any = true;
  }
  if (clustered_any) {
    for (unsigned p = 1; p <= params.n_phases; ++p) {
      if (!params.cluster_at_end[p - 1]) state.frozen[p - 1] = true;
    }
    grow_to_targets(state, params, targets, std::max(0, max_iterations - state.iteration), false,
                    seed_events);
  }

  GenerationResult result{state.grid, state.iteration, false, state.seed_shortfall};
  for (unsigned p = 1; p <= params.n_phases; ++p) {
    if (state.grid.count(static_cast<Label>(p)) < targets[p - 1]) result.shortfall = true;
  }
  return result;
}

}  // namespace osteovox::hetmigen
