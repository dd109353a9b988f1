#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "osteovox/errors.hpp"
#include "osteovox/nn/ops.hpp"

namespace osteovox::nn {

namespace {

struct ConvGeometry {
  std::size_t n, c, d, h, w;     // input
  std::size_t k, kd, kh, kw;     // kernel
  std::size_t od, oh, ow;        // output
  std::size_t stride, pad;

  std::size_t in_volume() const { return d * h * w; }
  std::size_t out_volume() const { return od * oh * ow; }
  std::size_t taps() const { return kd * kh * kw; }
};

// Output positions o with 0 <= o*stride - pad + tap < extent, as [lo, hi).
inline void valid_range(std::size_t extent, std::size_t out_extent, std::size_t stride,
                        std::size_t pad, std::size_t tap, std::size_t& lo, std::size_t& hi) {
  const long e = static_cast<long>(extent), s = static_cast<long>(stride);
  const long off = static_cast<long>(tap) - static_cast<long>(pad);
  long l = off >= 0 ? 0 : (-off + s - 1) / s;
  long h = (e - off + s - 1) / s;  // first o with o*s + off >= e
  l = std::max(l, 0L);
  h = std::min(h, static_cast<long>(out_extent));
  lo = static_cast<std::size_t>(l);
  hi = static_cast<std::size_t>(std::max(h, l));
}

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using StridedMap = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;

// Convolution runs as GEMMs over slabs of output rows: the input patches of
// `rows` consecutive (oz, oy) output rows are unfolded into a
// [C * taps, rows * OW] column matrix.
inline std::size_t slab_rows(const ConvGeometry& g) {
  constexpr std::size_t kTargetElements = std::size_t{1} << 17;
  const std::size_t per_row = std::max<std::size_t>(1, g.c * g.taps() * g.ow);
  return std::clamp<std::size_t>(kTargetElements / per_row, 1, g.od * g.oh);
}

template <class T>
void unfold(const ConvGeometry& g, const T* in, std::size_t row0, std::size_t rows, T* col) {
  const std::size_t cols = rows * g.ow;
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.c; ++c) {
    const T* ic = in + c * g.in_volume();
    for (std::size_t dz = 0; dz < g.kd; ++dz) {
      for (std::size_t dy = 0; dy < g.kh; ++dy) {
        for (std::size_t dx = 0; dx < g.kw; ++dx, ++r) {
          T* dst = col + r * cols;
          std::size_t xl, xh;
          valid_range(g.w, g.ow, g.stride, g.pad, dx, xl, xh);
          for (std::size_t q = 0; q < rows; ++q) {
            const std::size_t oz = (row0 + q) / g.oh, oy = (row0 + q) % g.oh;
            T* d = dst + q * g.ow;
            const long iz = static_cast<long>(oz * g.stride + dz) - static_cast<long>(g.pad);
            const long iy = static_cast<long>(oy * g.stride + dy) - static_cast<long>(g.pad);
            if (iz < 0 || iz >= static_cast<long>(g.d) || iy < 0 || iy >= static_cast<long>(g.h) || xh <= xl) {
              std::fill_n(d, g.ow, T(0));
              continue;
            }
            const T* src = ic + (static_cast<std::size_t>(iz) * g.h + static_cast<std::size_t>(iy)) * g.w;
            std::fill_n(d, xl, T(0));
            if (g.stride == 1) {
              std::copy_n(src + (xl + dx - g.pad), xh - xl, d + xl);
            } else {
              for (std::size_t ox = xl; ox < xh; ++ox) d[ox] = src[ox * g.stride + dx - g.pad];
            }
            std::fill(d + xh, d + g.ow, T(0));
          }
        }
      }
    }
  }
}

// out [K, OD, OH, OW] += correlation of one sample in [C, D, H, W] with kernel.
template <class T>
void conv_sample(const ConvGeometry& g, const T* in, const T* kernel, T* out) {
  const std::size_t ct = g.c * g.taps();
  const Eigen::Map<const RowMatrix<T>> w(kernel, static_cast<Eigen::Index>(g.k), static_cast<Eigen::Index>(ct));
  const std::size_t total = g.od * g.oh;
  const std::size_t step = slab_rows(g);
  std::vector<T> col(ct * step * g.ow);
  for (std::size_t row0 = 0; row0 < total; row0 += step) {
    const std::size_t rows = std::min(step, total - row0);
    const auto cols = static_cast<Eigen::Index>(rows * g.ow);
    unfold(g, in, row0, rows, col.data());
    const Eigen::Map<const RowMatrix<T>> cm(col.data(), static_cast<Eigen::Index>(ct), cols);
    StridedMap<T> om(out + row0 * g.ow, static_cast<Eigen::Index>(g.k), cols,
                     Eigen::OuterStride<>(static_cast<Eigen::Index>(g.out_volume())));
    om.noalias() += w * cm;
  }
}

// grad_in += conv^T(grad_out) for one sample, stride 1: a correlation of
// grad_out with the channel-swapped, spatially flipped kernel.
template <class T>
void conv_backward_input_stride1(const ConvGeometry& g, const T* grad_out, const std::vector<T>& flipped,
                                 T* grad_in) {
  ConvGeometry t{};
  t.n = 1;
  t.c = g.k;
  t.d = g.od;
  t.h = g.oh;
  t.w = g.ow;
  t.k = g.c;
  t.kd = g.kd;
  t.kh = g.kh;
  t.kw = g.kw;
  t.od = g.d;
  t.oh = g.h;
  t.ow = g.w;
  t.stride = 1;
  t.pad = g.kd - 1 - g.pad;
  conv_sample(t, grad_out, flipped.data(), grad_in);
}

template <class T>
void conv_backward_input_generic(const ConvGeometry& g, const T* grad_out, const T* kernel, T* grad_in) {
  const std::size_t taps = g.taps();
  for (std::size_t k = 0; k < g.k; ++k) {
    for (std::size_t c = 0; c < g.c; ++c) {
      for (std::size_t dz = 0; dz < g.kd; ++dz) {
        for (std::size_t dy = 0; dy < g.kh; ++dy) {
          for (std::size_t dx = 0; dx < g.kw; ++dx) {
            const T wv = kernel[(k * g.c + c) * taps + (dz * g.kh + dy) * g.kw + dx];
            std::size_t zl, zh, yl, yh, xl, xh;
            valid_range(g.d, g.od, g.stride, g.pad, dz, zl, zh);
            valid_range(g.h, g.oh, g.stride, g.pad, dy, yl, yh);
            valid_range(g.w, g.ow, g.stride, g.pad, dx, xl, xh);
            for (std::size_t oz = zl; oz < zh; ++oz) {
              const std::size_t iz = oz * g.stride + dz - g.pad;
              for (std::size_t oy = yl; oy < yh; ++oy) {
                const std::size_t iy = oy * g.stride + dy - g.pad;
                const T* go = grad_out + ((k * g.od + oz) * g.oh + oy) * g.ow;
                T* gi = grad_in + ((c * g.d + iz) * g.h + iy) * g.w;
                for (std::size_t ox = xl; ox < xh; ++ox) gi[ox * g.stride + dx - g.pad] += wv * go[ox];
              }
            }
          }
        }
      }
    }
  }
}

// grad_kernel [K, C * taps] += grad_out [K, OV] * unfolded input^T.
template <class T>
void conv_backward_kernel(const ConvGeometry& g, const T* grad_out, const T* in, T* grad_kernel) {
  const std::size_t ct = g.c * g.taps();
  Eigen::Map<RowMatrix<T>> gk(grad_kernel, static_cast<Eigen::Index>(g.k), static_cast<Eigen::Index>(ct));
  const std::size_t total = g.od * g.oh;
  const std::size_t step = slab_rows(g);
  std::vector<T> col(ct * step * g.ow);
  for (std::size_t row0 = 0; row0 < total; row0 += step) {
    const std::size_t rows = std::min(step, total - row0);
    const auto cols = static_cast<Eigen::Index>(rows * g.ow);
    unfold(g, in, row0, rows, col.data());
    const Eigen::Map<const RowMatrix<T>> cm(col.data(), static_cast<Eigen::Index>(ct), cols);
    const ConstStridedMap<T> gm(grad_out + row0 * g.ow, static_cast<Eigen::Index>(g.k), cols,
                                Eigen::OuterStride<>(static_cast<Eigen::Index>(g.out_volume())));
    gk.noalias() += gm * cm.transpose();
  }
}

}  // namespace

template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
  if (x.rank() != 5 || kernel.rank() != 5 || x.dim(1) != kernel.dim(1)) {
    throw ShapeError("conv3d: input " + to_string(x.shape()) + " does not match kernel " +
                     to_string(kernel.shape()));
  }
  if (stride == 0) throw ShapeError("conv3d: stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.dim(4),
                 kernel.dim(0), kernel.dim(2), kernel.dim(3), kernel.dim(4),
                 0, 0, 0, stride, padding};
  auto out_extent = [&](std::size_t in, std::size_t k) -> std::size_t {
    if (in + 2 * padding < k) {
      throw ShapeError("conv3d: input " + to_string(x.shape()) + " with kernel " +
                       to_string(kernel.shape()) + ", stride " + std::to_string(stride) +
                       ", padding " + std::to_string(padding) + " leaves no output positions");
    }
    return (in + 2 * padding - k) / stride + 1;
  };
  g.od = out_extent(g.d, g.kd);
  g.oh = out_extent(g.h, g.kh);
  g.ow = out_extent(g.w, g.kw);
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != g.k) {
    throw ShapeError("conv3d: bias " + to_string(bias.shape()) + " does not match " +
                     std::to_string(g.k) + " output channels");
  }

  std::vector<T> out(g.n * g.k * g.out_volume(), T(0));
  for (std::size_t s = 0; s < g.n; ++s) {
    T* o = out.data() + s * g.k * g.out_volume();
    if (has_bias) {
      for (std::size_t k = 0; k < g.k; ++k) std::fill_n(o + k * g.out_volume(), g.out_volume(), bias.values()[k]);
    }
    conv_sample(g, x.values().data() + s * g.c * g.in_volume(), kernel.values().data(), o);
  }

  std::vector<std::shared_ptr<Node<T>>> parents{x.node(), kernel.node()};
  if (has_bias) parents.push_back(bias.node());
  return make_result<T>(
      Shape{g.n, g.k, g.od, g.oh, g.ow}, std::move(out), std::move(parents),
      [g](Node<T>& nd) {
        auto& px = *nd.parents[0];
        auto& pk = *nd.parents[1];
        const std::size_t in_sample = g.c * g.in_volume();
        const std::size_t out_sample = g.k * g.out_volume();
        if (px.requires_grad) {
          auto& gx = px.ensure_grad();
          const bool fast = g.stride == 1 && g.pad + 1 <= g.kd && g.kd == g.kh && g.kh == g.kw;
          std::vector<T> flipped;
          if (fast) {
            // flipped[c][k][a][b][e] = kernel[k][c][kd-1-a][kh-1-b][kw-1-e]
            const std::size_t taps = g.taps();
            flipped.resize(pk.value.size());
            for (std::size_t k = 0; k < g.k; ++k)
              for (std::size_t c = 0; c < g.c; ++c)
                for (std::size_t t = 0; t < taps; ++t)
                  flipped[(c * g.k + k) * taps + (taps - 1 - t)] = pk.value[(k * g.c + c) * taps + t];
          }
          for (std::size_t s = 0; s < g.n; ++s) {
            const T* go = nd.grad.data() + s * out_sample;
            T* gi = gx.data() + s * in_sample;
            if (fast) {
              conv_backward_input_stride1(g, go, flipped, gi);
            } else {
              conv_backward_input_generic(g, go, pk.value.data(), gi);
            }
          }
        }
        if (pk.requires_grad) {
          auto& gk = pk.ensure_grad();
          for (std::size_t s = 0; s < g.n; ++s) {
            conv_backward_kernel(g, nd.grad.data() + s * out_sample, px.value.data() + s * in_sample, gk.data());
          }
        }
        if (nd.parents.size() > 2 && nd.parents[2]->requires_grad) {
          auto& gb = nd.parents[2]->ensure_grad();
          for (std::size_t s = 0; s < g.n; ++s)
            for (std::size_t k = 0; k < g.k; ++k) {
              const T* go = nd.grad.data() + s * out_sample + k * g.out_volume();
              T acc = T(0);
              for (std::size_t i = 0; i < g.out_volume(); ++i) acc += go[i];
              gb[k] += acc;
            }
        }
      },
      "conv3d");
}

template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& stats, Mode mode, T momentum, T eps) {
  if (x.rank() < 2) throw ShapeError("batch_norm needs input [N, C, ...]");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (gamma.numel() != c || beta.numel() != c || stats.running_mean.size() != c ||
      stats.running_var.size() != c) {
    throw ShapeError("batch_norm: per-channel parameters must have length " + std::to_string(c));
  }
  const std::size_t inner = x.numel() / (n * c == 0 ? 1 : n * c);
  const std::size_t count = n * inner;
  if (count == 0) throw DomainError("batch_norm on an empty batch");

  const auto xv = x.values();
  std::vector<T> mean_c(c), rstd(c);
  if (mode == Mode::Train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      T s = T(0);
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xv.data() + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      const T mu = s / static_cast<T>(count);
      T v = T(0);
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xv.data() + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      const T var = v / static_cast<T>(count);
      mean_c[ch] = mu;
      rstd[ch] = T(1) / std::sqrt(var + eps);
      const T unbiased = count > 1 ? v / static_cast<T>(count - 1) : var;
      stats.running_mean[ch] = (T(1) - momentum) * stats.running_mean[ch] + momentum * mu;
      stats.running_var[ch] = (T(1) - momentum) * stats.running_var[ch] + momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean_c[ch] = stats.running_mean[ch];
      rstd[ch] = T(1) / std::sqrt(stats.running_var[ch] + eps);
    }
  }

  std::vector<T> out(x.numel()), xhat(x.numel());
  const auto gv = gamma.values();
  const auto bv = beta.values();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const T h = (xv[base + i] - mean_c[ch]) * rstd[ch];
        xhat[base + i] = h;
        out[base + i] = h * gv[ch] + bv[ch];
      }
    }
  }
  const bool train = mode == Mode::Train;
  return make_result<T>(
      x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [n, c, inner, count, train, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& nd) {
        auto& px = *nd.parents[0];
        auto& pg = *nd.parents[1];
        auto& pb = *nd.parents[2];
        const auto& g = nd.grad;
        std::vector<T> sum_g(c, T(0)), sum_gh(c, T(0));
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (b * c + ch) * inner;
            T s1 = T(0), s2 = T(0);
            for (std::size_t i = 0; i < inner; ++i) {
              s1 += g[base + i];
              s2 += g[base + i] * xhat[base + i];
            }
            sum_g[ch] += s1;
            sum_gh[ch] += s2;
          }
        if (pg.requires_grad) {
          auto& gg = pg.ensure_grad();
          for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_gh[ch];
        }
        if (pb.requires_grad) {
          auto& gb = pb.ensure_grad();
          for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
        }
        if (px.requires_grad) {
          auto& gx = px.ensure_grad();
          const auto& gamma_v = pg.value;
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t base = (b * c + ch) * inner;
              const T scale_c = gamma_v[ch] * rstd[ch];
              if (train) {
                const T m1 = sum_g[ch] / static_cast<T>(count);
                const T m2 = sum_gh[ch] / static_cast<T>(count);
                for (std::size_t i = 0; i < inner; ++i)
                  gx[base + i] += scale_c * (g[base + i] - m1 - xhat[base + i] * m2);
              } else {
                for (std::size_t i = 0; i < inner; ++i) gx[base + i] += scale_c * g[base + i];
              }
            }
        }
      },
      "batch_norm");
}

template <class T>
Tensor<T> max_pool3d(const Tensor<T>& x, std::size_t f) {
  if (x.rank() < 3 || f == 0) throw ShapeError("max_pool3d needs rank >= 3 and a positive factor");
  const std::size_t d = x.dim(-3), h = x.dim(-2), w = x.dim(-1);
  if (d % f || h % f || w % f) {
    throw ShapeError("max_pool3d: spatial dims of " + to_string(x.shape()) +
                     " are not divisible by " + std::to_string(f));
  }
  const std::size_t lead = x.numel() / (d * h * w);
  const std::size_t od = d / f, oh = h / f, ow = w / f;
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 3] = od;
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  std::vector<T> out(lead * od * oh * ow);
  std::vector<std::size_t> arg(out.size());
  const auto xv = x.values();
  std::size_t o = 0;
  for (std::size_t l = 0; l < lead; ++l) {
    const std::size_t base = l * d * h * w;
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
          std::size_t best = base + ((z * f) * h + y * f) * w + xx * f;
          for (std::size_t a = 0; a < f; ++a)
            for (std::size_t b = 0; b < f; ++b)
              for (std::size_t e = 0; e < f; ++e) {
                const std::size_t i = base + ((z * f + a) * h + y * f + b) * w + xx * f + e;
                if (xv[i] > xv[best]) best = i;
              }
          out[o] = xv[best];
          arg[o] = best;
        }
  }
  if (BranchTrace::active()) {
    for (const std::size_t a : arg) BranchTrace::record(a);
  }
  return make_result<T>(
      std::move(out_shape), std::move(out), {x.node()},
      [arg = std::move(arg)](Node<T>& nd) {
        auto& g = nd.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += nd.grad[i];
      },
      "max_pool3d");
}

namespace {

// Linear interpolation taps for resampling `from` samples to `to` samples,
// align-corners=false: source coordinate (i + 0.5) * from / to - 0.5, clamped.
struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> w_hi;

  Taps(std::size_t from, std::size_t to) : lo(to), hi(to), w_hi(to) {
    for (std::size_t i = 0; i < to; ++i) {
      double src = (static_cast<double>(i) + 0.5) * static_cast<double>(from) / static_cast<double>(to) - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(from - 1));
      const auto l = static_cast<std::size_t>(std::floor(src));
      lo[i] = l;
      hi[i] = std::min(l + 1, from - 1);
      w_hi[i] = src - static_cast<double>(l);
    }
  }
};

// x viewed as [outer, from, inner] -> [outer, to, inner]
template <class T>
std::vector<T> interp_axis(const std::vector<T>& x, std::size_t outer, std::size_t from,
                           std::size_t inner, const Taps& t) {
  const std::size_t to = t.lo.size();
  std::vector<T> out(outer * to * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < to; ++j) {
      const T wh = static_cast<T>(t.w_hi[j]), wl = T(1) - wh;
      const T* a = x.data() + (o * from + t.lo[j]) * inner;
      const T* b = x.data() + (o * from + t.hi[j]) * inner;
      T* r = out.data() + (o * to + j) * inner;
      for (std::size_t i = 0; i < inner; ++i) r[i] = wl * a[i] + wh * b[i];
    }
  return out;
}

// Adjoint of interp_axis.
template <class T>
std::vector<T> interp_axis_adjoint(const std::vector<T>& g, std::size_t outer, std::size_t from,
                                   std::size_t inner, const Taps& t) {
  const std::size_t to = t.lo.size();
  std::vector<T> out(outer * from * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < to; ++j) {
      const T wh = static_cast<T>(t.w_hi[j]), wl = T(1) - wh;
      T* a = out.data() + (o * from + t.lo[j]) * inner;
      T* b = out.data() + (o * from + t.hi[j]) * inner;
      const T* r = g.data() + (o * to + j) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        a[i] += wl * r[i];
        b[i] += wh * r[i];
      }
    }
  return out;
}

}  // namespace

template <class T>
Tensor<T> resample_trilinear(const Tensor<T>& x, std::size_t nd_, std::size_t nh, std::size_t nw) {
  if (x.rank() != 5) throw ShapeError("trilinear resampling needs input [N, C, D, H, W]");
  if (nd_ == 0 || nh == 0 || nw == 0) throw ShapeError("trilinear resampling to an empty size");
  const std::size_t lead = x.dim(0) * x.dim(1);
  const std::size_t d = x.dim(2), h = x.dim(3), w = x.dim(4);
  const Taps tz(d, nd_), ty(h, nh), tx(w, nw);
  std::vector<T> v(x.values().begin(), x.values().end());
  v = interp_axis(v, lead * d * h, w, 1, tx);       // [lead, d, h, nw]
  v = interp_axis(v, lead * d, h, nw, ty);          // [lead, d, nh, nw]
  v = interp_axis(v, lead, d, nh * nw, tz);         // [lead, nd, nh, nw]
  return make_result<T>(
      Shape{x.dim(0), x.dim(1), nd_, nh, nw}, std::move(v), {x.node()},
      [=](Node<T>& n) {
        std::vector<T> g = interp_axis_adjoint(n.grad, lead, d, nh * nw, tz);
        g = interp_axis_adjoint(g, lead * d, h, nw, ty);
        g = interp_axis_adjoint(g, lead * d * h, w, 1, tx);
        auto& gx = n.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
      },
      "resample_trilinear");
}

template <class T>
Tensor<T> upsample_trilinear(const Tensor<T>& x, std::size_t factor) {
  if (factor == 0) throw ShapeError("upsampling factor must be at least 1");
  if (x.rank() != 5) throw ShapeError("trilinear upsampling needs input [N, C, D, H, W]");
  return resample_trilinear(x, x.dim(2) * factor, x.dim(3) * factor, x.dim(4) * factor);
}

#define OSTEOVOX_INSTANTIATE(T)                                                                         \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,          \
                            std::size_t);                                                               \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormStats<T>&, \
                                Mode, T, T);                                                            \
  template Tensor<T> max_pool3d(const Tensor<T>&, std::size_t);                                         \
  template Tensor<T> resample_trilinear(const Tensor<T>&, std::size_t, std::size_t, std::size_t);       \
  template Tensor<T> upsample_trilinear(const Tensor<T>&, std::size_t);

OSTEOVOX_INSTANTIATE(float)
OSTEOVOX_INSTANTIATE(double)
#undef OSTEOVOX_INSTANTIATE

}  // namespace osteovox::nn
