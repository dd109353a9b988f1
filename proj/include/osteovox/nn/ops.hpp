#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "osteovox/nn/tensor.hpp"

namespace osteovox::nn {

// Elementwise ----------------------------------------------------------------

/// Numpy-style broadcasting (shapes aligned from the right, extent 1 stretches).
template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <class T> Tensor<T> add_scalar(const Tensor<T>& a, T value);
template <class T> Tensor<T> relu(const Tensor<T>& x);  // subgradient 0 at 0
/// Exact GELU, x * Phi(x).
template <class T> Tensor<T> gelu(const Tensor<T>& x);

// Reductions -----------------------------------------------------------------

template <class T> Tensor<T> sum(const Tensor<T>& x);
template <class T> Tensor<T> mean(const Tensor<T>& x);

// Shape ----------------------------------------------------------------------

template <class T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <class T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
template <class T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

// Linear algebra -------------------------------------------------------------

/// a [..., m, k] times b [k, n].
template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Batched a [B, m, k] times b [B, k, n].
template <class T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);
/// [B, m, n] -> [B, n, m].
template <class T> Tensor<T> transpose_last2(const Tensor<T>& x);
/// x [..., in] W [in, out] + bias [out]; bias may be undefined.
template <class T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// Normalization --------------------------------------------------------------

template <class T> Tensor<T> softmax(const Tensor<T>& x, int axis);

inline constexpr double kLayerNormEps = 1e-6;
/// Normalizes over the last axis.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(kLayerNormEps));

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

template <class T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

enum class Mode { Train, Eval };

/// Per-channel normalization of x [N, C, ...]. Train mode uses the batch
/// statistics and folds them into `stats` (unbiased variance) with `momentum`;
/// eval mode reads `stats` only.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& stats, Mode mode, T momentum = T(kBatchNormMomentum),
                     T eps = T(kBatchNormEps));

// Volumetric -----------------------------------------------------------------

/// Cross-correlation of x [N, C, D, H, W] with kernel [K, C, kd, kh, kw],
/// zero padding on every side. Output extent is floor((D + 2p - kd) / stride) + 1.
/// `bias` [K] may be undefined.
template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t padding = 0);

/// Non-overlapping window maximum over the three trailing axes.
template <class T> Tensor<T> max_pool3d(const Tensor<T>& x, std::size_t factor);

/// Trilinear interpolation of x [N, C, D, H, W] by an integer factor with the
/// align-corners=false convention.
template <class T> Tensor<T> upsample_trilinear(const Tensor<T>& x, std::size_t factor);

/// Trilinear resampling of x [N, C, D, H, W] to an arbitrary size
/// (align-corners=false, edge-clamped).
template <class T>
Tensor<T> resample_trilinear(const Tensor<T>& x, std::size_t d, std::size_t h, std::size_t w);

// Attention ------------------------------------------------------------------

template <class T>
struct AttentionParams {
  Tensor<T> wq, wk, wv, wo;  // [D, D], applied as x W
  Tensor<T> bq, bk, bv, bo;  // [D]; may be undefined
  std::size_t n_heads = 1;
};

/// Scaled dot-product attention per head with scale 1/sqrt(D / n_heads),
/// heads concatenated and projected by wo. z is [N, D] or [B, N, D].
/// When `weights` is given it receives the attention matrix [B*heads, N, N].
template <class T>
Tensor<T> multi_head_self_attention(const Tensor<T>& z, const AttentionParams<T>& params,
                                    Tensor<T>* weights = nullptr);

// Segmentation losses --------------------------------------------------------

/// Mean negative log-softmax of the true class; logits [B, C, ...], one
/// label per (b, voxel).
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels);

inline constexpr double kSoftDiceSmooth = 1e-6;
/// Batch mean of the soft Dice coefficient of the foreground classes (1..C-1,
/// averaged), with probabilities softmax(logits) over axis 1:
///   (2 sum p*g + s) / (sum p + sum g + s).
template <class T>
Tensor<T> soft_dice(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                    T smooth = T(kSoftDiceSmooth));

}  // namespace osteovox::nn
