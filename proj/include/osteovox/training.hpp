#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "osteovox/dataset.hpp"
#include "osteovox/metrics.hpp"
#include "osteovox/transvnet.hpp"

namespace osteovox::training {

using transvnet::ModelConfig;
using Params = transvnet::TransVNetParams<float>;

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double lr = 0.01;
  double momentum = 0.9;  // SGD
  double beta1 = 0.9;     // Adam
  double beta2 = 0.999;
  double eps = 1e-8;
  /// L2 penalty on weights; norms, biases and embeddings are exempt.
  double weight_decay = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 1;
  /// 0 means one pass over all (sample, t) training pairs per epoch.
  std::size_t steps_per_epoch = 0;
  std::size_t batch_size = 8;
  OptimizerConfig optimizer;
  int horizon = 1;
  bool augment = true;
  std::uint64_t seed = 0;
  /// Write a checkpoint every this many steps into checkpoint_dir (0: off).
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
  /// Stop once this much wall-clock time has elapsed (0: unlimited).
  double time_budget_seconds = 0.0;

  void validate() const;
};

/// Parameters exempt from weight decay.
bool decay_exempt(const std::string& name);

/// SGD with momentum or Adam over the learnable tensors of a parameter set.
class Optimizer {
 public:
  Optimizer(const Params& params, OptimizerConfig config);
  /// Applies one update from the accumulated gradients, then clears them.
  void step(Params& params);
  std::size_t steps() const { return steps_; }

 private:
  OptimizerConfig config_;
  std::vector<std::vector<float>> first_;
  std::vector<std::vector<float>> second_;
  std::size_t steps_ = 0;
};

struct LossSample {
  std::size_t step = 0;
  double combined = 0.0;
  double cross_entropy = 0.0;
};

struct SplitMetrics {
  std::string split;
  std::size_t pairs = 0;
  double dsc = 0.0;
  double hd_max = 0.0;
  double hd_average = 0.0;
};

struct MetricsReport {
  std::vector<SplitMetrics> splits;
  std::vector<LossSample> loss_curve;
  std::size_t steps = 0;
  double wall_seconds = 0.0;
  bool diverged = false;

  std::string to_json() const;
};

/// Loss curve as "step,combined_loss,ce_loss" rows.
std::string loss_csv(const std::vector<LossSample>& curve);
void write_loss_csv(const std::vector<LossSample>& curve, const std::filesystem::path& path);

/// One batch of training pairs per call.
using BatchSource = std::function<std::vector<dataset::TrainingSample>(std::mt19937_64&, std::size_t)>;

/// Return false to stop training after the reported step.
using StepCallback = std::function<bool(const LossSample&, Params&)>;

struct TrainResult {
  Params params;
  MetricsReport report;
};

/// The optimization loop on an explicit batch source. A non-finite loss
/// stops training with the parameters of the last finite step restored and
/// report.diverged set; when checkpointing is on, those parameters are also
/// written to "last_good.ovxw".
TrainResult fit(Params params, const BatchSource& source, std::size_t total_steps,
                const TrainConfig& config, const StepCallback& on_step = {});

/// Trains on the manifest's training split with balanced sampling.
TrainResult train(const dataset::DatasetManifest& manifest, dataset::SequenceStore& store,
                  const ModelConfig& model_config, const TrainConfig& config,
                  std::optional<Params> initial = std::nullopt, const StepCallback& on_step = {});

/// Maps (input frame, month, target frame) to a predicted frame.
using Predictor = std::function<VoxelGrid(const VoxelGrid&, double, const VoxelGrid&)>;

Predictor model_predictor(Params& params);
/// Returns the target itself.
Predictor copy_stub();
/// Returns the target with mineral and marrow swapped.
Predictor invert_stub();

/// Hausdorff distance that tolerates empty mineral sets: the grid diagonal
/// when exactly one side is empty, 0 when both are.
double robust_hausdorff(const VoxelGrid& a, const VoxelGrid& b, HausdorffMode mode);

/// Mean mineral DSC and Hausdorff distances over every (sample, t) pair of
/// `split` at `horizon`, without augmentation.
SplitMetrics evaluate(const Predictor& predictor, const dataset::DatasetManifest& manifest,
                      dataset::SequenceStore& store, dataset::Split split, int horizon);

/// Mean combined loss of an eval-mode forward pass over `samples`.
double mean_loss(Params& params, const std::vector<dataset::TrainingSample>& samples,
                 std::size_t batch_size = 4);

struct TransferReport {
  std::vector<std::string> copied;
  std::vector<std::string> resampled;
  std::vector<std::string> fresh;
};

struct TransferResult {
  Params params;
  TransferReport report;
};

/// Moves weights learned at one resolution to another config. Tensors with
/// matching names and shapes are copied, the position table is trilinearly
/// resampled over the token lattice, anything else is initialized from
/// `seed`. Throws ConfigError listing mismatched core dimensions.
TransferResult transfer_weights(const Params& low, const ModelConfig& high_config, std::uint64_t seed);

void save_checkpoint(const Params& params, const std::filesystem::path& path);
/// Reads a checkpoint and checks every tensor name and shape against `config`.
Params load_checkpoint(const std::filesystem::path& path, const ModelConfig& config);

}  // namespace osteovox::training
