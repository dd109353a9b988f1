#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "osteovox/degradation.hpp"
#include "osteovox/nn/checkpoint.hpp"
#include "osteovox/nn/ops.hpp"
#include "osteovox/voxel_grid.hpp"

namespace osteovox::transvnet {

using nn::Mode;
using nn::Shape;
using nn::Tensor;

/// How a label grid becomes network input channels.
enum class InputEncoding {
  Replicate,  // the 0/1 mineral indicator copied into every channel
  OneHot,     // one channel per phase; requires in_channels == n_classes
};

struct ModelConfig {
  std::size_t input_resolution = 160;  // H = W = T
  std::size_t in_channels = 3;
  std::size_t n_classes = 2;
  std::size_t cnn_downscalings = 3;
  std::size_t cnn_channels = 32;  // C'
  std::size_t patch_size = 2;     // P
  std::size_t hidden_dim = 256;   // D
  std::size_t n_layers = 4;       // L
  std::size_t n_heads = 8;
  std::size_t mlp_dim = 512;
  /// Per encoder level; empty ramps C'/2^(levels-1-i) (at least 4), the
  /// last entry must equal cnn_channels.
  std::vector<std::size_t> encoder_channels;
  /// Stem width followed by one width per upsampling block; empty halves
  /// from min(D, 128) per block with a floor of 16.
  std::vector<std::size_t> decoder_channels;
  double t_max = 36.0;
  bool vit_only = false;
  InputEncoding input_encoding = InputEncoding::Replicate;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  /// H' (the CNN feature resolution), or H in ViT-only mode.
  std::size_t feature_resolution() const;
  /// Channels fed to patch embedding: C' or in_channels in ViT-only mode.
  std::size_t feature_channels() const;
  std::size_t token_grid() const { return feature_resolution() / patch_size; }
  std::size_t token_count() const;
  std::size_t patch_dim() const;
  std::size_t upsampling_blocks() const;
  std::vector<std::size_t> resolved_encoder_channels() const;
  std::vector<std::size_t> resolved_decoder_channels() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named learnable tensors plus BatchNorm running statistics. Names and
/// insertion order are fixed by the config, so two parameter sets built from
/// the same config line up index by index.
template <class T>
class TransVNetParams {
 public:
  TransVNetParams() = default;
  /// Fresh initialization: He-normal convolutions, 0.02-normal embeddings,
  /// scaled-normal linear maps, unit norms, zero biases.
  TransVNetParams(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  nn::BatchNormStats<T>& stats(const std::string& name);
  const nn::BatchNormStats<T>& stats(const std::string& name) const;

  /// Learnable tensors in insertion order.
  const std::vector<std::pair<std::string, Tensor<T>>>& named() const { return tensors_; }
  std::vector<std::pair<std::string, Tensor<T>>>& named() { return tensors_; }
  const std::map<std::string, nn::BatchNormStats<T>>& all_stats() const { return stats_; }

  std::size_t parameter_count() const;

  /// Learnable tensors followed by "<bn>.running_mean" / "<bn>.running_var".
  std::vector<nn::NamedArray> to_named_arrays() const;
  /// Rebuilds from arrays, checking every expected name and shape against
  /// `config`; throws ConfigError listing missing, unexpected and
  /// mis-shaped entries.
  static TransVNetParams from_named_arrays(const ModelConfig& config,
                                           const std::vector<nn::NamedArray>& arrays);

  /// Names and shapes every parameter set of `config` has, in order.
  static std::vector<std::pair<std::string, Shape>> expected_shapes(const ModelConfig& config);

  void zero_grad();
  void set_requires_grad(bool on);

 private:
  void add(std::string name, Tensor<T> t);

  ModelConfig config_;
  std::vector<std::pair<std::string, Tensor<T>>> tensors_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, nn::BatchNormStats<T>> stats_;
};

template <class T>
struct EncoderOutput {
  Tensor<T> features;          // [B, C', H', H', H']
  std::vector<Tensor<T>> skips;  // level i at resolution H / 2^i
};

/// Label grids to [B, C, H, H, H] per the config's input encoding.
template <class T>
Tensor<T> encode_input(const std::vector<const VoxelGrid*>& grids, const ModelConfig& config);

template <class T>
EncoderOutput<T> cnn_encode(const Tensor<T>& input, TransVNetParams<T>& params, Mode mode);

/// Patch tokens [B, N, D] = patches E + position + time embedding, where
/// the time embedding t / t_max * w + b is added to every token of sample b.
template <class T>
Tensor<T> tokenize_and_embed(const Tensor<T>& features, const std::vector<double>& months,
                             const TransVNetParams<T>& params);

/// L pre-norm residual blocks on [B, N, D].
template <class T>
Tensor<T> transformer_encode(const Tensor<T>& z0, const TransVNetParams<T>& params);

/// Token sequence back to voxel logits [B, n_classes, H, H, H].
template <class T>
Tensor<T> decode(const Tensor<T>& zl, const EncoderOutput<T>& encoder, TransVNetParams<T>& params,
                 Mode mode);

template <class T>
Tensor<T> forward(const Tensor<T>& input, const std::vector<double>& months,
                  TransVNetParams<T>& params, Mode mode);

/// The two loss terms and their average 0.5 CE + 0.5 (1 - soft Dice).
template <class T>
struct LossTerms {
  Tensor<T> total;
  Tensor<T> cross_entropy;
  Tensor<T> soft_dice;
};

/// Labels are one byte per voxel in [B, H, H, H] order; a label >= the
/// class count raises DomainError.
template <class T>
LossTerms<T> loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels);

/// Per-voxel argmax of one sample's logits [C, ...] (ties go to class 0).
VoxelGrid argmax_labels(const Tensor<float>& logits, std::size_t sample, Dims dims);

/// Eval-mode next-state prediction for `grid` at month t.
VoxelGrid predict(const VoxelGrid& grid, double t, TransVNetParams<float>& params);

/// Autoregressive rollout: frame k+1 = predict(frame k, t0 + k * horizon).
/// The returned sequence holds steps + 1 frames starting with `grid`.
EvolutionSequence rollout(const VoxelGrid& grid, double t0, std::size_t steps, int horizon,
                          TransVNetParams<float>& params);

/// Parameters converted between precisions (the 64-bit copy is used for
/// gradient verification).
template <class To, class From>
TransVNetParams<To> convert(const TransVNetParams<From>& params);

}  // namespace osteovox::transvnet
