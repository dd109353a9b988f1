#include "osteovox/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "osteovox/errors.hpp"
#include "osteovox/nn/checkpoint.hpp"

namespace osteovox::training {

using dataset::TrainingSample;
using nn::Tensor;

void TrainConfig::validate() const {
  if (!(optimizer.lr > 0.0)) throw ConfigError("train config: lr must be positive");
  if (batch_size == 0) throw ConfigError("train config: batch size must be at least 1");
  if (horizon < 1) throw ConfigError("train config: horizon must be at least 1");
  if (optimizer.momentum < 0.0 || optimizer.momentum >= 1.0) {
    throw ConfigError("train config: momentum must lie in [0, 1)");
  }
  if (optimizer.weight_decay < 0.0) throw ConfigError("train config: weight decay must be non-negative");
  if (checkpoint_every > 0 && checkpoint_dir.empty()) {
    throw ConfigError("train config: checkpoint cadence set without a checkpoint directory");
  }
}

bool decay_exempt(const std::string& name) {
  const bool bias = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
  return bias || name.rfind("embed.", 0) == 0 || name.find(".bn") != std::string::npos ||
         name.find(".ln") != std::string::npos;
}

// Optimizer ----------------------------------------------------------------------

Optimizer::Optimizer(const Params& params, OptimizerConfig config) : config_(config) {
  for (const auto& [name, t] : params.named()) {
    first_.emplace_back(t.numel(), 0.0f);
    if (config_.kind == OptimizerKind::Adam) second_.emplace_back(t.numel(), 0.0f);
  }
}

void Optimizer::step(Params& params) {
  ++steps_;
  auto& named = params.named();
  if (named.size() != first_.size()) throw ConfigError("optimizer state does not match the parameter set");
  const auto lr = static_cast<float>(config_.lr);
  const auto wd = static_cast<float>(config_.weight_decay);
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto& [name, t] = named[i];
    auto v = t.mutable_values();
    auto g = t.mutable_grad();
    const float decay = decay_exempt(name) ? 0.0f : wd;
    auto& m = first_[i];
    if (config_.kind == OptimizerKind::Sgd) {
      const auto mu = static_cast<float>(config_.momentum);
      for (std::size_t j = 0; j < v.size(); ++j) {
        const float gj = g[j] + decay * v[j];
        m[j] = mu * m[j] + gj;
        v[j] -= lr * m[j];
      }
    } else {
      auto& s = second_[i];
      const auto b1 = static_cast<float>(config_.beta1), b2 = static_cast<float>(config_.beta2);
      const auto step_size = static_cast<float>(config_.lr / bc1);
      const auto rbc2 = static_cast<float>(1.0 / std::sqrt(bc2));
      const auto eps = static_cast<float>(config_.eps);
      for (std::size_t j = 0; j < v.size(); ++j) {
        const float gj = g[j] + decay * v[j];
        m[j] = b1 * m[j] + (1.0f - b1) * gj;
        s[j] = b2 * s[j] + (1.0f - b2) * gj * gj;
        v[j] -= step_size * m[j] / (std::sqrt(s[j]) * rbc2 + eps);
      }
    }
  }
  params.zero_grad();
}

// Reports ------------------------------------------------------------------------

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["steps"] = steps;
  j["wall_seconds"] = wall_seconds;
  j["diverged"] = diverged;
  j["splits"] = nlohmann::json::array();
  for (const auto& s : splits) {
    j["splits"].push_back({{"split", s.split},
                           {"pairs", s.pairs},
                           {"dsc", s.dsc},
                           {"hd_max", s.hd_max},
                           {"hd_average", s.hd_average}});
  }
  if (!loss_curve.empty()) {
    j["final_combined_loss"] = loss_curve.back().combined;
    j["final_ce_loss"] = loss_curve.back().cross_entropy;
  }
  return j.dump(2);
}

std::string loss_csv(const std::vector<LossSample>& curve) {
  std::ostringstream out;
  out << "step,combined_loss,ce_loss\n";
  char buf[96];
  for (const auto& s : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", s.step, s.combined, s.cross_entropy);
    out << buf;
  }
  return out.str();
}

void write_loss_csv(const std::vector<LossSample>& curve, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << loss_csv(curve);
}

// Training loop ------------------------------------------------------------------

namespace {

struct Batch {
  Tensor<float> input;
  std::vector<double> months;
  std::vector<std::uint8_t> labels;
};

Batch assemble(const std::vector<TrainingSample>& samples, const ModelConfig& config) {
  Batch b;
  std::vector<const VoxelGrid*> grids;
  for (const auto& s : samples) {
    grids.push_back(&s.input);
    b.months.push_back(static_cast<double>(s.t));
    const auto d = s.target.data();
    b.labels.insert(b.labels.end(), d.begin(), d.end());
  }
  b.input = transvnet::encode_input<float>(grids, config);
  return b;
}

// Deep copy of learnable values and running statistics.
struct Snapshot {
  std::vector<std::vector<float>> values;
  std::map<std::string, nn::BatchNormStats<float>> stats;

  void capture(const Params& p) {
    values.resize(p.named().size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto v = p.named()[i].second.values();
      values[i].assign(v.begin(), v.end());
    }
    stats = p.all_stats();
  }

  void restore(Params& p) const {
    for (std::size_t i = 0; i < values.size(); ++i) {
      auto v = p.named()[i].second.mutable_values();
      std::copy(values[i].begin(), values[i].end(), v.begin());
    }
    for (const auto& [name, s] : stats) p.stats(name) = s;
  }
};

std::string step_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06zu.ovxw", step);
  return buf;
}

}  // namespace

TrainResult fit(Params params, const BatchSource& source, std::size_t total_steps,
                const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  if (!config.checkpoint_dir.empty()) std::filesystem::create_directories(config.checkpoint_dir);

  TrainResult result{std::move(params), {}};
  Params& p = result.params;
  p.set_requires_grad(true);
  p.zero_grad();
  Optimizer optimizer(p, config.optimizer);
  std::mt19937_64 rng(config.seed);
  Snapshot last_good;
  last_good.capture(p);

  for (std::size_t step = 1; step <= total_steps; ++step) {
    const Batch batch = assemble(source(rng, config.batch_size), p.config());
    const Snapshot before = [&] {
      Snapshot s;
      s.capture(p);
      return s;
    }();
    const Tensor<float> logits = transvnet::forward(batch.input, batch.months, p, nn::Mode::Train);
    const auto terms = transvnet::loss(logits, batch.labels);
    const LossSample sample{step, terms.total.item(), terms.cross_entropy.item()};
    if (!std::isfinite(sample.combined)) {
      last_good.restore(p);
      p.zero_grad();
      result.report.diverged = true;
      if (!config.checkpoint_dir.empty()) save_checkpoint(p, config.checkpoint_dir / "last_good.ovxw");
      break;
    }
    last_good = before;
    nn::backward(terms.total);
    optimizer.step(p);
    result.report.loss_curve.push_back(sample);
    result.report.steps = step;
    if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0) {
      save_checkpoint(p, config.checkpoint_dir / step_name(step));
    }
    if (on_step && !on_step(sample, p)) break;
    if (config.time_budget_seconds > 0.0 && elapsed() >= config.time_budget_seconds) break;
  }
  result.report.wall_seconds = elapsed();
  return result;
}

TrainResult train(const dataset::DatasetManifest& manifest, dataset::SequenceStore& store,
                  const ModelConfig& model_config, const TrainConfig& config, std::optional<Params> initial,
                  const StepCallback& on_step) {
  config.validate();
  model_config.validate();
  const std::size_t pairs = dataset::enumerate_pairs(manifest, dataset::Split::Train, config.horizon).size();
  if (pairs == 0) throw DomainError("the training split has no (sample, t) pairs at this horizon");
  const std::size_t per_epoch =
      config.steps_per_epoch > 0 ? config.steps_per_epoch : (pairs + config.batch_size - 1) / config.batch_size;
  Params params = initial ? std::move(*initial) : Params(model_config, config.seed);
  if (!(params.config() == model_config)) throw ConfigError("initial parameters were built for another config");
  const BatchSource source = [&](std::mt19937_64& rng, std::size_t n) {
    return dataset::sample_batch(manifest, store, dataset::Split::Train, n, config.horizon, rng, config.augment);
  };
  return fit(std::move(params), source, config.epochs * per_epoch, config, on_step);
}

// Evaluation ---------------------------------------------------------------------

Predictor model_predictor(Params& params) {
  return [&params](const VoxelGrid& input, double t, const VoxelGrid&) {
    return transvnet::predict(input, t, params);
  };
}

Predictor copy_stub() {
  return [](const VoxelGrid&, double, const VoxelGrid& target) { return target; };
}

Predictor invert_stub() {
  return [](const VoxelGrid&, double, const VoxelGrid& target) {
    VoxelGrid out = target;
    for (std::size_t i = 0; i < out.size(); ++i) out.set(i, out[i] == kMineral ? kMarrow : kMineral);
    return out;
  };
}

double robust_hausdorff(const VoxelGrid& a, const VoxelGrid& b, HausdorffMode mode) {
  const bool ea = a.count(kMineral) == 0, eb = b.count(kMineral) == 0;
  if (ea && eb) return 0.0;
  if (ea || eb) {
    const Dims d = a.dims();
    const auto sq = [](std::size_t n) { return static_cast<double>(n - 1) * static_cast<double>(n - 1); };
    return std::sqrt(sq(d.nx) + sq(d.ny) + sq(d.nz));
  }
  return hausdorff(a, b, kMineral, mode);
}

SplitMetrics evaluate(const Predictor& predictor, const dataset::DatasetManifest& manifest,
                      dataset::SequenceStore& store, dataset::Split split, int horizon) {
  const auto pairs = dataset::enumerate_pairs(manifest, split, horizon);
  if (pairs.empty()) {
    throw DomainError(std::string("split '") + dataset::to_string(split) + "' has no pairs at horizon " +
                      std::to_string(horizon));
  }
  SplitMetrics m;
  m.split = dataset::to_string(split);
  m.pairs = pairs.size();
  for (const auto& draw : pairs) {
    const TrainingSample s = dataset::materialize(manifest, store, draw);
    const VoxelGrid pred = predictor(s.input, static_cast<double>(s.t), s.target);
    m.dsc += dice(pred, s.target, kMineral);
    m.hd_max += robust_hausdorff(pred, s.target, HausdorffMode::Max);
    m.hd_average += robust_hausdorff(pred, s.target, HausdorffMode::Average);
  }
  const auto n = static_cast<double>(pairs.size());
  m.dsc /= n;
  m.hd_max /= n;
  m.hd_average /= n;
  return m;
}

double mean_loss(Params& params, const std::vector<TrainingSample>& samples, std::size_t batch_size) {
  if (samples.empty()) throw DomainError("mean_loss over no samples");
  if (batch_size == 0) batch_size = 1;
  const nn::NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); i += batch_size) {
    const std::vector<TrainingSample> chunk(samples.begin() + static_cast<std::ptrdiff_t>(i),
                                            samples.begin() + static_cast<std::ptrdiff_t>(
                                                                  std::min(samples.size(), i + batch_size)));
    const Batch b = assemble(chunk, params.config());
    const auto logits = transvnet::forward(b.input, b.months, params, nn::Mode::Eval);
    total += transvnet::loss(logits, b.labels).total.item() * static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(samples.size());
}

// Weight transfer ----------------------------------------------------------------

namespace {

std::vector<float> resample_positions(const Tensor<float>& table, std::size_t from_grid, std::size_t to_grid) {
  const nn::NoGradGuard no_grad;
  const std::size_t d = table.dim(1);
  Tensor<float> x = nn::reshape(table.detach(), {1, from_grid, from_grid, from_grid, d});
  x = nn::permute(x, {0, 4, 1, 2, 3});
  x = nn::resample_trilinear(x, to_grid, to_grid, to_grid);
  x = nn::permute(x, {0, 2, 3, 4, 1});
  const auto v = x.values();
  return {v.begin(), v.end()};
}

}  // namespace

TransferResult transfer_weights(const Params& low, const ModelConfig& high_config, std::uint64_t seed) {
  const ModelConfig& lc = low.config();
  high_config.validate();
  std::vector<std::string> mismatch;
  auto check = [&](const char* field, std::size_t a, std::size_t b) {
    if (a != b) mismatch.push_back(std::string(field) + " " + std::to_string(a) + " vs " + std::to_string(b));
  };
  check("cnn_channels", lc.cnn_channels, high_config.cnn_channels);
  check("hidden_dim", lc.hidden_dim, high_config.hidden_dim);
  check("n_layers", lc.n_layers, high_config.n_layers);
  check("n_heads", lc.n_heads, high_config.n_heads);
  check("patch_dim", lc.patch_dim(), high_config.patch_dim());
  if (lc.vit_only != high_config.vit_only) mismatch.push_back("vit_only differs");
  if (!mismatch.empty()) {
    std::string msg = "transfer_weights: incompatible configs:";
    for (const auto& m : mismatch) msg += "\n  " + m;
    throw ConfigError(msg);
  }

  TransferResult out{Params(high_config, seed), {}};
  for (auto& [name, t] : out.params.named()) {
    if (low.contains(name)) {
      const Tensor<float>& src = low.at(name);
      if (src.shape() == t.shape()) {
        const auto v = src.values();
        std::copy(v.begin(), v.end(), t.mutable_values().begin());
        out.report.copied.push_back(name);
        continue;
      }
      if (name == "embed.position") {
        const auto v = resample_positions(src, lc.token_grid(), high_config.token_grid());
        std::copy(v.begin(), v.end(), t.mutable_values().begin());
        out.report.resampled.push_back(name);
        continue;
      }
    }
    out.report.fresh.push_back(name);
  }
  for (const auto& [name, s] : low.all_stats()) {
    if (!out.params.all_stats().count(name)) continue;
    auto& dst = out.params.stats(name);
    if (dst.running_mean.size() == s.running_mean.size()) dst = s;
  }
  return out;
}

// Checkpoints --------------------------------------------------------------------

void save_checkpoint(const Params& params, const std::filesystem::path& path) {
  nn::write_checkpoint(params.to_named_arrays(), path);
}

Params load_checkpoint(const std::filesystem::path& path, const ModelConfig& config) {
  return Params::from_named_arrays(config, nn::read_checkpoint(path));
}

}  // namespace osteovox::training
