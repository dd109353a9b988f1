#include <algorithm>
#include <cmath>

#include "osteovox/errors.hpp"
#include "osteovox/nn/ops.hpp"

namespace osteovox::nn {

namespace {

struct LogitLayout {
  std::size_t batch, classes, voxels;
};

LogitLayout check_logits(const Shape& shape, std::span<const std::uint8_t> labels, const char* op) {
  if (shape.size() < 2) throw ShapeError(std::string(op) + ": logits must be [B, C, ...]");
  LogitLayout l{shape[0], shape[1], 1};
  for (std::size_t i = 2; i < shape.size(); ++i) l.voxels *= shape[i];
  if (labels.size() != l.batch * l.voxels) {
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) +
                     " labels for logits " + to_string(shape));
  }
  for (std::uint8_t v : labels) {
    if (v >= l.classes) {
      throw DomainError(std::string(op) + ": label " + std::to_string(v) + " out of range for " +
                        std::to_string(l.classes) + " classes");
    }
  }
  return l;
}

// Softmax over the class axis of logits laid out [B, C, V].
template <class T>
std::vector<T> class_softmax(std::span<const T> x, const LogitLayout& l) {
  std::vector<T> p(x.size());
  for (std::size_t b = 0; b < l.batch; ++b) {
    const std::size_t base = b * l.classes * l.voxels;
    for (std::size_t v = 0; v < l.voxels; ++v) {
      T mx = x[base + v];
      for (std::size_t c = 1; c < l.classes; ++c) mx = std::max(mx, x[base + c * l.voxels + v]);
      T s = T(0);
      for (std::size_t c = 0; c < l.classes; ++c) {
        const T e = std::exp(x[base + c * l.voxels + v] - mx);
        p[base + c * l.voxels + v] = e;
        s += e;
      }
      for (std::size_t c = 0; c < l.classes; ++c) p[base + c * l.voxels + v] /= s;
    }
  }
  return p;
}

}  // namespace

template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  const LogitLayout l = check_logits(logits.shape(), labels, "softmax_cross_entropy");
  const auto x = logits.values();
  const std::size_t total = l.batch * l.voxels;
  T loss = T(0);
  for (std::size_t b = 0; b < l.batch; ++b) {
    const std::size_t base = b * l.classes * l.voxels;
    for (std::size_t v = 0; v < l.voxels; ++v) {
      T mx = x[base + v];
      for (std::size_t c = 1; c < l.classes; ++c) mx = std::max(mx, x[base + c * l.voxels + v]);
      T s = T(0);
      for (std::size_t c = 0; c < l.classes; ++c) s += std::exp(x[base + c * l.voxels + v] - mx);
      const T log_z = mx + std::log(s);
      loss += log_z - x[base + labels[b * l.voxels + v] * l.voxels + v];
    }
  }
  loss /= static_cast<T>(total);
  std::vector<std::uint8_t> y(labels.begin(), labels.end());
  return make_result<T>(
      Shape{}, {loss}, {logits.node()},
      [l, total, y = std::move(y)](Node<T>& nd) {
        auto& px = *nd.parents[0];
        auto& g = px.ensure_grad();
        const auto p = class_softmax<T>(px.value, l);
        const T scale = nd.grad[0] / static_cast<T>(total);
        for (std::size_t b = 0; b < l.batch; ++b) {
          const std::size_t base = b * l.classes * l.voxels;
          for (std::size_t c = 0; c < l.classes; ++c)
            for (std::size_t v = 0; v < l.voxels; ++v) {
              const std::size_t i = base + c * l.voxels + v;
              const T target = y[b * l.voxels + v] == c ? T(1) : T(0);
              g[i] += scale * (p[i] - target);
            }
        }
      },
      "softmax_cross_entropy");
}

template <class T>
Tensor<T> soft_dice(const Tensor<T>& logits, std::span<const std::uint8_t> labels, T smooth) {
  const LogitLayout l = check_logits(logits.shape(), labels, "soft_dice");
  if (l.classes < 2) throw ShapeError("soft_dice needs at least two classes");
  const auto p = class_softmax<T>(logits.values(), l);
  const std::size_t fg = l.classes - 1;
  // Per (b, foreground class): intersection I = sum p*g, denominator S = sum p + sum g.
  std::vector<T> inter(l.batch * fg, T(0)), denom(l.batch * fg, T(0));
  for (std::size_t b = 0; b < l.batch; ++b)
    for (std::size_t c = 1; c < l.classes; ++c) {
      const T* pc = p.data() + (b * l.classes + c) * l.voxels;
      const std::uint8_t* yb = labels.data() + b * l.voxels;
      T i_acc = T(0), s_acc = T(0);
      for (std::size_t v = 0; v < l.voxels; ++v) {
        const T gv = yb[v] == c ? T(1) : T(0);
        i_acc += pc[v] * gv;
        s_acc += pc[v] + gv;
      }
      inter[b * fg + c - 1] = i_acc;
      denom[b * fg + c - 1] = s_acc;
    }
  T value = T(0);
  for (std::size_t k = 0; k < inter.size(); ++k) value += (T(2) * inter[k] + smooth) / (denom[k] + smooth);
  const T norm = static_cast<T>(l.batch * fg);
  value /= norm;

  std::vector<std::uint8_t> y(labels.begin(), labels.end());
  return make_result<T>(
      Shape{}, {value}, {logits.node()},
      [l, fg, norm, smooth, p, inter = std::move(inter), denom = std::move(denom), y = std::move(y)](Node<T>& nd) {
        auto& g = nd.parents[0]->ensure_grad();
        // dD/dp_cv for class c >= 1; chain through the class softmax:
        // dL/dx_kv = p_kv * (dL/dp_kv - sum_c p_cv dL/dp_cv)
        std::vector<T> dp(l.classes);
        for (std::size_t b = 0; b < l.batch; ++b) {
          const std::size_t base = b * l.classes * l.voxels;
          for (std::size_t v = 0; v < l.voxels; ++v) {
            dp[0] = T(0);
            T dot = T(0);
            for (std::size_t c = 1; c < l.classes; ++c) {
              const std::size_t k = b * fg + c - 1;
              const T num = T(2) * inter[k] + smooth;
              const T den = denom[k] + smooth;
              const T gv = y[b * l.voxels + v] == c ? T(1) : T(0);
              dp[c] = nd.grad[0] / norm * (T(2) * gv * den - num) / (den * den);
            }
            for (std::size_t c = 0; c < l.classes; ++c) dot += p[base + c * l.voxels + v] * dp[c];
            for (std::size_t c = 0; c < l.classes; ++c) {
              const std::size_t i = base + c * l.voxels + v;
              g[i] += p[i] * (dp[c] - dot);
            }
          }
        }
      },
      "soft_dice");
}

#define OSTEOVOX_INSTANTIATE(T)                                                                  \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const std::uint8_t>);    \
  template Tensor<T> soft_dice(const Tensor<T>&, std::span<const std::uint8_t>, T);

OSTEOVOX_INSTANTIATE(float)
OSTEOVOX_INSTANTIATE(double)
#undef OSTEOVOX_INSTANTIATE

}  // namespace osteovox::nn
