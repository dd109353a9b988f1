#include "osteovox/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "osteovox/components.hpp"
#include "osteovox/errors.hpp"
#include "osteovox/evolution_io.hpp"
#include "osteovox/random.hpp"

namespace osteovox::dataset {

using nlohmann::json;

bool quality_filter(const VoxelGrid& frame0) {
  if (frame0.count(kMineral) == 0) return false;
  return largest_component_fraction(frame0, kMineral, Connectivity::Face) > kQualityThreshold;
}

bool quality_filter(const EvolutionSequence& seq) {
  return !seq.frames.empty() && quality_filter(seq.frames.front());
}

const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw DomainError("unknown split '" + s + "'");
}

std::size_t DatasetManifest::count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [s](const auto& e) { return e.split == s; }));
}

std::string DatasetManifest::to_json() const {
  json doc;
  doc["split_seed"] = split_seed;
  doc["bin_edges"] = bin_edges;
  doc["entries"] = json::array();
  for (const auto& e : entries) {
    doc["entries"].push_back({{"id", e.id},
                              {"file", e.file},
                              {"vf", e.vf},
                              {"bin", e.bin},
                              {"split", to_string(e.split)},
                              {"timesteps", e.timesteps}});
  }
  doc["warnings"] = warnings;
  doc["rejected"] = rejected;
  return doc.dump(2);
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  const json doc = json::parse(text);
  DatasetManifest m;
  m.split_seed = doc.at("split_seed").get<std::uint64_t>();
  m.bin_edges = doc.at("bin_edges").get<std::vector<double>>();
  for (const auto& e : doc.at("entries")) {
    m.entries.push_back({e.at("id").get<std::string>(), e.at("file").get<std::string>(),
                         e.at("vf").get<double>(), e.at("bin").get<int>(),
                         split_from_string(e.at("split").get<std::string>()),
                         e.at("timesteps").get<std::uint32_t>()});
  }
  if (doc.contains("warnings")) m.warnings = doc["warnings"].get<std::vector<std::string>>();
  if (doc.contains("rejected")) m.rejected = doc["rejected"].get<std::vector<std::string>>();
  for (const auto& e : m.entries) {
    if (e.bin != bin_index(e.vf, m.bin_edges)) {
      throw DomainError("manifest entry " + e.id + " has a bin inconsistent with bin_edges");
    }
  }
  return m;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json() << '\n';
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

int bin_index(double vf, const std::vector<double>& edges) {
  if (edges.size() < 2) return 0;
  const int last = static_cast<int>(edges.size()) - 2;
  const auto it = std::upper_bound(edges.begin(), edges.end(), vf);
  const int i = static_cast<int>(it - edges.begin()) - 1;
  return std::clamp(i, 0, last);
}

std::vector<double> default_bin_edges(double min_vf, double max_vf, double width) {
  const long lo = static_cast<long>(std::floor(min_vf / width + 1e-9));
  long hi = static_cast<long>(std::floor(max_vf / width + 1e-9)) + 1;
  if (hi <= lo) hi = lo + 1;
  std::vector<double> edges;
  for (long k = lo; k <= hi; ++k) edges.push_back(static_cast<double>(k) * width);
  return edges;
}

SplitCounts split_counts(std::size_t n) {
  SplitCounts c;
  c.test = (n + 5) / 10;
  c.val = (15 * (n - c.test) + 50) / 100;
  if (n >= 3) {
    c.test = std::max<std::size_t>(c.test, 1);
    c.val = std::max<std::size_t>(c.val, 1);
  }
  c.train = n - c.test - c.val;
  return c;
}

FileSummary summarize_file(const std::filesystem::path& path) {
  const auto seq = read_evolution(path);
  FileSummary s;
  s.id = path.stem().string();
  s.file = path.string();
  s.vf = volume_fraction(seq.frames.front(), kMineral);
  s.timesteps = static_cast<std::uint32_t>(seq.frames.size());
  s.passes_quality = quality_filter(seq);
  return s;
}

namespace {

// Largest-remainder apportionment of `total` over weights summing to `sum`.
std::vector<std::size_t> apportion(const std::vector<std::size_t>& weights, std::size_t total) {
  const std::size_t sum = std::accumulate(weights.begin(), weights.end(), std::size_t{0});
  std::vector<std::size_t> out(weights.size(), 0);
  if (sum == 0) return out;
  std::vector<std::pair<std::size_t, std::size_t>> remainders;  // (remainder numerator, bin)
  std::size_t given = 0;
  for (std::size_t b = 0; b < weights.size(); ++b) {
    out[b] = weights[b] * total / sum;
    given += out[b];
    remainders.emplace_back(weights[b] * total % sum, b);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; given < total; ++k) {
    const std::size_t b = remainders[k % remainders.size()].second;
    if (out[b] < weights[b]) {
      ++out[b];
      ++given;
    }
  }
  return out;
}

}  // namespace

DatasetManifest build_manifest(const std::vector<FileSummary>& files,
                               std::vector<double> bin_edges, std::uint64_t split_seed) {
  DatasetManifest m;
  m.split_seed = split_seed;
  std::vector<FileSummary> usable;
  for (const auto& f : files) {
    if (f.passes_quality) {
      usable.push_back(f);
    } else {
      m.rejected.push_back(f.file);
    }
  }
  if (usable.empty()) throw DomainError("no file passes the quality filter");
  if (usable.size() < 10) {
    m.warnings.push_back("only " + std::to_string(usable.size()) +
                         " usable files; splits are at least one entry each");
  }
  std::sort(usable.begin(), usable.end(), [](const auto& a, const auto& b) {
    return a.id != b.id ? a.id < b.id : a.file < b.file;
  });

  if (bin_edges.empty()) {
    const auto [lo, hi] = std::minmax_element(usable.begin(), usable.end(),
                                              [](const auto& a, const auto& b) { return a.vf < b.vf; });
    bin_edges = default_bin_edges(lo->vf, hi->vf);
  }
  if (bin_edges.size() < 2 || !std::is_sorted(bin_edges.begin(), bin_edges.end()) ||
      std::adjacent_find(bin_edges.begin(), bin_edges.end()) != bin_edges.end()) {
    throw DomainError("bin edges must be strictly increasing with at least two values");
  }

  auto bin_sizes = [&] {
    std::vector<std::size_t> sizes(bin_edges.size() - 1, 0);
    for (const auto& f : usable) ++sizes[bin_index(f.vf, bin_edges)];
    return sizes;
  };
  for (auto sizes = bin_sizes(); sizes.size() > 1; sizes = bin_sizes()) {
    const auto small = std::find_if(sizes.begin(), sizes.end(),
                                    [](std::size_t s) { return s < kMinBinSize; });
    if (small == sizes.end()) break;
    const std::size_t b = static_cast<std::size_t>(small - sizes.begin());
    // Merge with the smaller neighbour (the next one on ties).
    std::size_t other = b + 1;
    if (b + 1 == sizes.size() || (b > 0 && sizes[b - 1] < sizes[b + 1])) other = b - 1;
    const std::size_t removed_edge = std::max(b, other);
    m.warnings.push_back("bin [" + std::to_string(bin_edges[b]) + ", " +
                         std::to_string(bin_edges[b + 1]) + ") has " + std::to_string(sizes[b]) +
                         " entries; merged with its neighbour");
    bin_edges.erase(bin_edges.begin() + static_cast<std::ptrdiff_t>(removed_edge));
  }
  m.bin_edges = bin_edges;

  const std::size_t n_bins = m.bin_count();
  std::vector<std::vector<std::size_t>> members(n_bins);
  for (std::size_t i = 0; i < usable.size(); ++i) {
    members[bin_index(usable[i].vf, bin_edges)].push_back(i);
  }
  std::vector<std::size_t> sizes(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) sizes[b] = members[b].size();

  const SplitCounts totals = split_counts(usable.size());
  const auto test = apportion(sizes, totals.test);
  std::vector<std::size_t> rest(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) rest[b] = sizes[b] - test[b];
  const auto val = apportion(rest, totals.val);

  Rng rng(split_seed);
  std::vector<Split> assigned(usable.size(), Split::Train);
  for (std::size_t b = 0; b < n_bins; ++b) {
    auto& idx = members[b];
    for (std::size_t k = idx.size(); k > 1; --k) {
      std::swap(idx[k - 1], idx[uniform_index(rng, k)]);
    }
    for (std::size_t k = 0; k < idx.size(); ++k) {
      assigned[idx[k]] = k < test[b] ? Split::Test : (k < test[b] + val[b] ? Split::Val : Split::Train);
    }
  }
  for (std::size_t i = 0; i < usable.size(); ++i) {
    const auto& f = usable[i];
    m.entries.push_back({f.id, f.file, f.vf, bin_index(f.vf, bin_edges), assigned[i], f.timesteps});
  }
  return m;
}

DatasetManifest build_manifest(const std::vector<std::filesystem::path>& files,
                               std::vector<double> bin_edges, std::uint64_t split_seed) {
  std::vector<FileSummary> summaries;
  summaries.reserve(files.size());
  for (const auto& f : files) summaries.push_back(summarize_file(f));
  return build_manifest(summaries, std::move(bin_edges), split_seed);
}

std::vector<SampleDraw> draw_samples(const DatasetManifest& manifest, Split split,
                                     std::size_t batch_size, int horizon, Rng& rng, bool augment) {
  if (horizon < 1) throw DomainError("horizon must be at least 1");
  std::vector<std::vector<std::size_t>> by_bin(manifest.bin_count());
  bool split_nonempty = false;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (e.split != split) continue;
    split_nonempty = true;
    if (static_cast<int>(e.timesteps) - 1 >= horizon) by_bin[e.bin].push_back(i);
  }
  if (!split_nonempty) {
    throw DomainError(std::string("split '") + to_string(split) + "' is empty");
  }
  std::vector<int> bins;
  for (std::size_t b = 0; b < by_bin.size(); ++b) {
    if (!by_bin[b].empty()) bins.push_back(static_cast<int>(b));
  }
  if (bins.empty()) {
    throw DomainError("horizon " + std::to_string(horizon) +
                      " exceeds the sequence length of every entry in the split");
  }
  std::vector<SampleDraw> draws;
  draws.reserve(batch_size);
  for (std::size_t k = 0; k < batch_size; ++k) {
    SampleDraw d;
    d.bin = bins[uniform_index(rng, bins.size())];
    const auto& pool = by_bin[d.bin];
    d.entry = pool[uniform_index(rng, pool.size())];
    const int last_start = static_cast<int>(manifest.entries[d.entry].timesteps) - 1 - horizon;
    d.t = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(last_start + 1)));
    d.horizon = horizon;
    if (augment) {
      d.symmetry = SymmetryElement(static_cast<int>(uniform_index(rng, SymmetryElement::kOrder)));
    }
    draws.push_back(d);
  }
  return draws;
}

const EvolutionSequence& SequenceStore::get(const DatasetManifest& manifest, std::size_t entry) {
  const auto& e = manifest.entries.at(entry);
  auto it = cache_.find(e.file);
  if (it == cache_.end()) {
    std::filesystem::path p(e.file);
    if (p.is_relative() && !root_.empty()) p = root_ / p;
    it = cache_.emplace(e.file, read_evolution(p)).first;
  }
  return it->second;
}

TrainingSample materialize(const DatasetManifest& manifest, SequenceStore& store,
                           const SampleDraw& draw) {
  const auto& seq = store.get(manifest, draw.entry);
  if (draw.t < 0 || static_cast<std::size_t>(draw.t + draw.horizon) >= seq.frames.size()) {
    throw DomainError("sample month range exceeds the stored sequence");
  }
  TrainingSample s{seq.frames[draw.t], seq.frames[draw.t + draw.horizon], draw.t, draw.horizon,
                   draw.entry};
  if (draw.symmetry) {
    s.input = apply_symmetry(s.input, *draw.symmetry);
    s.target = apply_symmetry(s.target, *draw.symmetry);
  }
  return s;
}

std::vector<TrainingSample> sample_batch(const DatasetManifest& manifest, SequenceStore& store,
                                         Split split, std::size_t batch_size, int horizon,
                                         Rng& rng, bool augment) {
  std::vector<TrainingSample> batch;
  for (const auto& d : draw_samples(manifest, split, batch_size, horizon, rng, augment)) {
    batch.push_back(materialize(manifest, store, d));
  }
  return batch;
}

std::vector<SampleDraw> enumerate_pairs(const DatasetManifest& manifest, Split split,
                                        int horizon) {
  std::vector<SampleDraw> out;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (e.split != split) continue;
    for (int t = 0; t + horizon < static_cast<int>(e.timesteps); ++t) {
      out.push_back({i, e.bin, t, horizon, std::nullopt});
    }
  }
  return out;
}

}  // namespace osteovox::dataset
