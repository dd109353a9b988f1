#include <algorithm>
#include <cmath>

#include "osteovox/errors.hpp"
#include "osteovox/nn/ops.hpp"

namespace osteovox::nn {

namespace {

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_stride, b_stride;  // aligned with `out`; 0 on stretched axes
  bool same = false;
};

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  p.out.assign(r, 1);
  p.a_stride.assign(r, 0);
  p.b_stride.assign(r, 0);
  const auto as = strides_of(a), bs = strides_of(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ai = i + a.size() >= r ? i + a.size() - r : SIZE_MAX;
    const std::size_t bi = i + b.size() >= r ? i + b.size() - r : SIZE_MAX;
    const std::size_t ad = ai == SIZE_MAX ? 1 : a[ai];
    const std::size_t bd = bi == SIZE_MAX ? 1 : b[bi];
    if (ad != bd && ad != 1 && bd != 1) {
      throw ShapeError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b) +
                       " do not broadcast");
    }
    p.out[i] = std::max(ad, bd);
    if (ad != 1) p.a_stride[i] = as[ai];
    if (bd != 1) p.b_stride[i] = bs[bi];
  }
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element in order.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t n = numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = p.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ai = 0, bi = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ai, bi);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ai += p.a_stride[d];
      bi += p.b_stride[d];
      if (idx[d] < p.out[d]) break;
      ai -= p.a_stride[d] * p.out[d];
      bi -= p.b_stride[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

enum class BinaryOp { Add, Sub, Mul };

template <class T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryOp op, const char* name) {
  const BroadcastPlan plan = plan_broadcast(a.shape(), b.shape(), name);
  std::vector<T> out(numel(plan.out));
  const auto av = a.values();
  const auto bv = b.values();
  switch (op) {
    case BinaryOp::Add:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] + bv[j]; });
      break;
    case BinaryOp::Sub:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] - bv[j]; });
      break;
    case BinaryOp::Mul:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] * bv[j]; });
      break;
  }
  return make_result<T>(
      plan.out, std::move(out), {a.node(), b.node()},
      [plan, op](Node<T>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        const auto& g = n.grad;
        if (pa.requires_grad) {
          auto& ga = pa.ensure_grad();
          if (op == BinaryOp::Mul) {
            const auto& bv = pb.value;
            for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { ga[i] += g[o] * bv[j]; });
          } else {
            for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t) { ga[i] += g[o]; });
          }
        }
        if (pb.requires_grad) {
          auto& gb = pb.ensure_grad();
          if (op == BinaryOp::Mul) {
            const auto& av = pa.value;
            for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { gb[j] += g[o] * av[i]; });
          } else if (op == BinaryOp::Sub) {
            for_each_broadcast(plan, [&](std::size_t o, std::size_t, std::size_t j) { gb[j] -= g[o]; });
          } else {
            for_each_broadcast(plan, [&](std::size_t o, std::size_t, std::size_t j) { gb[j] += g[o]; });
          }
        }
      },
      name);
}

}  // namespace

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryOp::Add, "add");
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryOp::Sub, "sub");
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryOp::Mul, "mul");
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= factor;
  return make_result<T>(
      a.shape(), std::move(out), {a.node()},
      [factor](Node<T>& n) {
        auto& g = n.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * n.grad[i];
      },
      "scale");
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  std::vector<T> out(a.values().begin(), a.values().end());
  for (auto& v : out) v += value;
  return make_result<T>(
      a.shape(), std::move(out), {a.node()},
      [](Node<T>& n) {
        auto& g = n.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
      },
      "add_scalar");
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.values().begin(), x.values().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  if (BranchTrace::active()) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      word = (word << 1) | (out[i] > T(0) ? 1u : 0u);
      if (i % 64 == 63 || i + 1 == out.size()) {
        BranchTrace::record(word);
        word = 0;
      }
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {x.node()},
      [](Node<T>& n) {
        auto& p = *n.parents[0];
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (p.value[i] > T(0)) g[i] += n.grad[i];
        }
      },
      "relu");
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  std::vector<T> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * T(kInvSqrt2)));
  }
  return make_result<T>(
      x.shape(), std::move(out), {x.node()},
      [](Node<T>& n) {
        constexpr double kInvSqrt2Pi = 0.39894228040143267794;
        auto& p = *n.parents[0];
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T v = p.value[i];
          const T cdf = T(0.5) * (T(1) + std::erf(v * T(kInvSqrt2)));
          const T pdf = T(kInvSqrt2Pi) * std::exp(T(-0.5) * v * v);
          g[i] += n.grad[i] * (cdf + v * pdf);
        }
      },
      "gelu");
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.values()) s += v;
  return make_result<T>(
      Shape{}, {s}, {x.node()},
      [](Node<T>& n) {
        auto& g = n.parents[0]->ensure_grad();
        for (auto& v : g) v += n.grad[0];
      },
      "sum");
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DomainError("mean of an empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  std::vector<T> out(x.values().begin(), x.values().end());
  return make_result<T>(
      std::move(shape), std::move(out), {x.node()},
      [](Node<T>& n) {
        auto& g = n.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
      },
      "reshape");
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  if (axes.size() != r) throw ShapeError("permute: axis list length does not match rank");
  std::vector<bool> used(r, false);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (axes[i] >= r || used[axes[i]]) throw ShapeError("permute: invalid axis list");
    used[axes[i]] = true;
    out_shape[i] = in[axes[i]];
  }
  // src offset of each output element, built with an odometer
  const auto in_stride = strides_of(in);
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) step[i] = in_stride[axes[i]];
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t s = 0;
    for (std::size_t o = 0; o < n; ++o) {
      src[o] = s;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        s += step[d];
        if (idx[d] < out_shape[d]) break;
        s -= step[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
  std::vector<T> out(n);
  const auto xv = x.values();
  for (std::size_t o = 0; o < n; ++o) out[o] = xv[src[o]];
  return make_result<T>(
      std::move(out_shape), std::move(out), {x.node()},
      [src = std::move(src)](Node<T>& nd) {
        auto& g = nd.parents[0]->ensure_grad();
        for (std::size_t o = 0; o < src.size(); ++o) g[src[o]] += nd.grad[o];
      },
      "permute");
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of no tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;  // elements per outer slice, per part
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat: shape " + to_string(s) + " incompatible with " + to_string(first));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  for (const auto& p : parts) widths.push_back(p.shape()[axis] * inner);
  const std::size_t row = out_shape[axis] * inner;

  std::vector<T> out(numel(out_shape));
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + col));
    }
    col += widths[k];
    parents.push_back(parts[k].node());
  }
  return make_result<T>(
      std::move(out_shape), std::move(out), std::move(parents),
      [widths, outer, row](Node<T>& n) {
        std::size_t c = 0;
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
          auto& p = *n.parents[k];
          if (p.requires_grad) {
            auto& g = p.ensure_grad();
            for (std::size_t o = 0; o < outer; ++o) {
              for (std::size_t j = 0; j < widths[k]; ++j) g[o * widths[k] + j] += n.grad[o * row + c + j];
            }
          }
          c += widths[k];
        }
      },
      "concat");
}

#define OSTEOVOX_INSTANTIATE(T)                                                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> scale(const Tensor<T>&, T);                                     \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                \
  template Tensor<T> relu(const Tensor<T>&);                                         \
  template Tensor<T> gelu(const Tensor<T>&);                                         \
  template Tensor<T> sum(const Tensor<T>&);                                          \
  template Tensor<T> mean(const Tensor<T>&);                                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                               \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);     \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);

OSTEOVOX_INSTANTIATE(float)
OSTEOVOX_INSTANTIATE(double)
#undef OSTEOVOX_INSTANTIATE

}  // namespace osteovox::nn
