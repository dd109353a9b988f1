#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "osteovox/degradation.hpp"
#include "osteovox/symmetry.hpp"

namespace osteovox::dataset {

using Rng = std::mt19937_64;

/// Largest 6-connected mineral component of frame 0 holds more than 95% of
/// the mineral. Empty mineral is unusable (false).
bool quality_filter(const EvolutionSequence& seq);
bool quality_filter(const VoxelGrid& frame0);

inline constexpr double kQualityThreshold = 0.95;
inline constexpr double kTestFraction = 0.10;
inline constexpr double kValFraction = 0.15;  // of the non-test remainder
inline constexpr std::size_t kMinBinSize = 3;
inline constexpr double kDefaultBinWidth = 0.05;

enum class Split { Train, Val, Test };
const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct ManifestEntry {
  std::string id;
  std::string file;
  double vf = 0.0;  // initial mineral volume fraction
  int bin = 0;
  Split split = Split::Train;
  std::uint32_t timesteps = 0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<double> bin_edges;
  std::uint64_t split_seed = 0;
  std::vector<std::string> warnings;
  std::vector<std::string> rejected;  // files failing the quality filter

  std::size_t bin_count() const { return bin_edges.size() < 2 ? 1 : bin_edges.size() - 1; }
  std::size_t count(Split s) const;

  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);
};

/// Bin of `vf` given monotone edges: [e_i, e_{i+1}); values outside the
/// range clamp to the first or last bin.
int bin_index(double vf, const std::vector<double>& edges);

/// Edges at `width` spacing covering [min_vf, max_vf].
std::vector<double> default_bin_edges(double min_vf, double max_vf,
                                      double width = kDefaultBinWidth);

/// Split sizes for n entries: test = round(0.10 n), val = round(0.15 (n - test)),
/// each raised to at least one once n >= 3.
struct SplitCounts {
  std::size_t test = 0, val = 0, train = 0;
};
SplitCounts split_counts(std::size_t n);

/// Header-level description of one candidate file.
struct FileSummary {
  std::string id;
  std::string file;
  double vf = 0.0;
  std::uint32_t timesteps = 0;
  bool passes_quality = false;
};
FileSummary summarize_file(const std::filesystem::path& path);

/// Filters, bins (merging bins with fewer than three entries), and assigns
/// a bin-stratified split. Empty `bin_edges` selects default_bin_edges over
/// the observed range.
DatasetManifest build_manifest(const std::vector<FileSummary>& files,
                               std::vector<double> bin_edges, std::uint64_t split_seed);
DatasetManifest build_manifest(const std::vector<std::filesystem::path>& files,
                               std::vector<double> bin_edges, std::uint64_t split_seed);

struct SampleDraw {
  std::size_t entry = 0;
  int bin = 0;
  int t = 0;
  int horizon = 1;
  std::optional<SymmetryElement> symmetry;
};

/// Balanced draw: uniform bin among bins with an eligible entry, uniform
/// entry within the bin, uniform start month; one symmetry element when
/// `augment`.
std::vector<SampleDraw> draw_samples(const DatasetManifest& manifest, Split split,
                                     std::size_t batch_size, int horizon, Rng& rng, bool augment);

struct TrainingSample {
  VoxelGrid input;
  VoxelGrid target;
  int t = 0;
  int horizon = 1;
  std::size_t entry = 0;
};

/// Loads sequences on first use; paths are resolved against `root`.
class SequenceStore {
 public:
  explicit SequenceStore(std::filesystem::path root = {}) : root_(std::move(root)) {}

  const EvolutionSequence& get(const DatasetManifest& manifest, std::size_t entry);

 private:
  std::filesystem::path root_;
  std::map<std::string, EvolutionSequence> cache_;
};

TrainingSample materialize(const DatasetManifest& manifest, SequenceStore& store,
                           const SampleDraw& draw);

std::vector<TrainingSample> sample_batch(const DatasetManifest& manifest, SequenceStore& store,
                                         Split split, std::size_t batch_size, int horizon,
                                         Rng& rng, bool augment);

/// Every (entry, t) pair of a split at the given horizon, in manifest order.
std::vector<SampleDraw> enumerate_pairs(const DatasetManifest& manifest, Split split, int horizon);

}  // namespace osteovox::dataset
