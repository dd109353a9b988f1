#include <algorithm>
#include <cmath>

#include "osteovox/errors.hpp"
#include "osteovox/nn/ops.hpp"

namespace osteovox::nn {

namespace {

// out[m x n] (+)= a[m x k] * b[k x n]
template <class T>
void gemm_nn(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* o = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

// out[m x k] += g[m x n] * b[k x n]^T
template <class T>
void gemm_nt(const T* g, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* gr = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* br = b + p * n;
      T s = T(0);
      for (std::size_t j = 0; j < n; ++j) s += gr[j] * br[j];
      out[i * k + p] += s;
    }
  }
}

// out[k x n] += a[m x k]^T * g[m x n]
template <class T>
void gemm_tn(const T* a, const T* g, T* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* gr = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      T* o = out + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * gr[j];
    }
  }
}

}  // namespace

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() < 1 || weight.rank() != 2 || x.dim(-1) != weight.dim(0)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not match weight " +
                     to_string(weight.shape()));
  }
  const std::size_t k = weight.dim(0), n = weight.dim(1);
  const std::size_t m = x.numel() / k;
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != n)) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match output width " +
                     std::to_string(n));
  }
  Shape out_shape = x.shape();
  out_shape.back() = n;
  std::vector<T> out(m * n, T(0));
  if (has_bias) {
    for (std::size_t i = 0; i < m; ++i) std::copy_n(bias.values().begin(), n, out.begin() + i * n);
  }
  gemm_nn(x.values().data(), weight.values().data(), out.data(), m, k, n);
  std::vector<std::shared_ptr<Node<T>>> parents{x.node(), weight.node()};
  if (has_bias) parents.push_back(bias.node());
  return make_result<T>(
      std::move(out_shape), std::move(out), std::move(parents),
      [m, k, n](Node<T>& nd) {
        auto& px = *nd.parents[0];
        auto& pw = *nd.parents[1];
        if (px.requires_grad) gemm_nt(nd.grad.data(), pw.value.data(), px.ensure_grad().data(), m, k, n);
        if (pw.requires_grad) gemm_tn(px.value.data(), nd.grad.data(), pw.ensure_grad().data(), m, k, n);
        if (nd.parents.size() > 2 && nd.parents[2]->requires_grad) {
          auto& gb = nd.parents[2]->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += nd.grad[i * n + j];
        }
      },
      "linear");
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2) throw ShapeError("matmul: left operand needs rank >= 2");
  return linear(a, b, Tensor<T>());
}

template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw ShapeError("bmm: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                     " are incompatible");
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<T> out(batch * m * n, T(0));
  for (std::size_t s = 0; s < batch; ++s) {
    gemm_nn(a.values().data() + s * m * k, b.values().data() + s * k * n, out.data() + s * m * n, m, k, n);
  }
  return make_result<T>(
      Shape{batch, m, n}, std::move(out), {a.node(), b.node()},
      [batch, m, k, n](Node<T>& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        for (std::size_t s = 0; s < batch; ++s) {
          const T* g = nd.grad.data() + s * m * n;
          if (pa.requires_grad) gemm_nt(g, pb.value.data() + s * k * n, pa.ensure_grad().data() + s * m * k, m, k, n);
          if (pb.requires_grad) gemm_tn(pa.value.data() + s * m * k, g, pb.ensure_grad().data() + s * k * n, m, k, n);
        }
      },
      "bmm");
}

template <class T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("transpose_last2 needs a rank-3 tensor");
  return permute(x, {0, 2, 1});
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int r = static_cast<int>(x.rank());
  const int ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r) {
    throw ShapeError("softmax axis " + std::to_string(axis) + " out of range for " + to_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.shape()[i];
  for (int i = ax + 1; i < r; ++i) inner *= x.shape()[i];
  const std::size_t len = x.shape()[ax];
  std::vector<T> out(x.numel());
  const auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = xv[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      T s = T(0);
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        s += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= s;
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {x.node()},
      [outer, inner, len](Node<T>& nd) {
        auto& g = nd.parents[0]->ensure_grad();
        const auto& y = nd.value;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T dot = T(0);
            for (std::size_t j = 0; j < len; ++j) dot += nd.grad[base + j * inner] * y[base + j * inner];
            for (std::size_t j = 0; j < len; ++j) {
              const std::size_t i = base + j * inner;
              g[i] += y[i] * (nd.grad[i] - dot);
            }
          }
        }
      },
      "softmax");
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm needs rank >= 1");
  const std::size_t d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: gamma/beta length must equal the last axis " + std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel()), xhat(x.numel()), rstd(rows);
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * rstd[r];
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& nd) {
        auto& px = *nd.parents[0];
        auto& pg = *nd.parents[1];
        auto& pb = *nd.parents[2];
        const auto& g = nd.grad;
        if (pg.requires_grad || pb.requires_grad) {
          auto& gg = pg.ensure_grad();
          auto& gb = pb.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              gg[j] += g[r * d + j] * xhat[r * d + j];
              gb[j] += g[r * d + j];
            }
          }
        }
        if (px.requires_grad) {
          auto& gx = px.ensure_grad();
          const auto& gamma_v = pg.value;
          for (std::size_t r = 0; r < rows; ++r) {
            T m1 = T(0), m2 = T(0);
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = g[r * d + j] * gamma_v[j];
              m1 += dh;
              m2 += dh * xhat[r * d + j];
            }
            m1 /= static_cast<T>(d);
            m2 /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = g[r * d + j] * gamma_v[j];
              gx[r * d + j] += rstd[r] * (dh - m1 - xhat[r * d + j] * m2);
            }
          }
        }
      },
      "layer_norm");
}

template <class T>
Tensor<T> multi_head_self_attention(const Tensor<T>& z_in, const AttentionParams<T>& p,
                                    Tensor<T>* weights) {
  const bool batched = z_in.rank() == 3;
  if (!batched && z_in.rank() != 2) throw ShapeError("attention input must be [N, D] or [B, N, D]");
  const Tensor<T> z = batched ? z_in : reshape(z_in, {1, z_in.dim(0), z_in.dim(1)});
  const std::size_t b = z.dim(0), n = z.dim(1), d = z.dim(2);
  if (p.n_heads == 0 || d % p.n_heads != 0) {
    throw ConfigError("hidden width " + std::to_string(d) + " is not divisible by " +
                      std::to_string(p.n_heads) + " heads");
  }
  const std::size_t h = p.n_heads, dh = d / h;
  auto split_heads = [&](const Tensor<T>& t) {
    return reshape(permute(reshape(t, {b, n, h, dh}), {0, 2, 1, 3}), {b * h, n, dh});
  };
  const Tensor<T> q = split_heads(linear(z, p.wq, p.bq));
  const Tensor<T> k = split_heads(linear(z, p.wk, p.bk));
  const Tensor<T> v = split_heads(linear(z, p.wv, p.bv));
  const Tensor<T> scores = scale(bmm(q, transpose_last2(k)), T(1) / std::sqrt(static_cast<T>(dh)));
  const Tensor<T> attn = softmax(scores, 2);
  if (weights != nullptr) *weights = attn;
  const Tensor<T> ctx = reshape(permute(reshape(bmm(attn, v), {b, h, n, dh}), {0, 2, 1, 3}), {b, n, d});
  const Tensor<T> out = linear(ctx, p.wo, p.bo);
  return batched ? out : reshape(out, {n, d});
}

#define OSTEOVOX_INSTANTIATE(T)                                                                     \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> transpose_last2(const Tensor<T>&);                                             \
  template Tensor<T> softmax(const Tensor<T>&, int);                                                \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);           \
  template Tensor<T> multi_head_self_attention(const Tensor<T>&, const AttentionParams<T>&, Tensor<T>*);

OSTEOVOX_INSTANTIATE(float)
OSTEOVOX_INSTANTIATE(double)
#undef OSTEOVOX_INSTANTIATE

}  // namespace osteovox::nn
