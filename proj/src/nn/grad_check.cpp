#include "osteovox/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "osteovox/errors.hpp"
#include "osteovox/nn/ops.hpp"
#include "osteovox/random.hpp"

namespace osteovox::nn {

namespace {

struct Probe {
  double up = 0.0;
  double down = 0.0;
  bool smooth = true;
};

class Checker {
 public:
  Checker(const GradCheckFn& op, std::vector<Tensor<double>>& inputs, const GradCheckOptions& options)
      : op_(op), inputs_(inputs), options_(options), rng_(options.seed) {}

  double evaluate(std::uint64_t* fingerprint) {
    if (!fingerprint) return scalar_of(op_(inputs_)).item();
    BranchTrace trace;
    const double v = scalar_of(op_(inputs_)).item();
    *fingerprint = trace.fingerprint();
    return v;
  }

  Tensor<double> scalar_of(const Tensor<double>& out) {
    if (out.rank() == 0) return out;
    if (!projection_.defined()) {
      std::vector<double> r(out.numel());
      for (auto& v : r) v = standard_normal(rng_);
      projection_ = Tensor<double>(out.shape(), std::move(r));
    }
    return sum(mul(out, projection_));
  }

  // Evaluates at x + step * u and x - step * u, where `apply(sign)` moves the
  // inputs and `restore()` puts them back.
  template <class Apply, class Restore>
  Probe probe(Apply apply, Restore restore) {
    Probe p;
    std::uint64_t fu = 0, fd = 0;
    const bool screen = options_.skip_nonsmooth;
    apply(+1.0);
    p.up = evaluate(screen ? &fu : nullptr);
    apply(-1.0);
    p.down = evaluate(screen ? &fd : nullptr);
    restore();
    p.smooth = !screen || fu == fd;
    return p;
  }

  void score(GradCheckResult& r, double analytic, double numeric, std::size_t input, std::size_t element) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double err = std::abs(analytic - numeric) / denom;
    ++r.probes;
    if (err > r.max_relative_error) {
      r.max_relative_error = err;
      r.worst_input = input;
      r.worst_element = element;
      r.analytic = analytic;
      r.numeric = numeric;
    }
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  const GradCheckFn& op_;
  std::vector<Tensor<double>>& inputs_;
  const GradCheckOptions& options_;
  std::mt19937_64 rng_;
  Tensor<double> projection_;
};

void check_elements(Checker& c, std::vector<Tensor<double>>& inputs, const GradCheckOptions& options,
                    GradCheckResult& result) {
  const double h = options.step;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& in = inputs[k];
    if (!in.requires_grad()) continue;
    const std::vector<double> analytic(in.grad().begin(), in.grad().end());
    std::vector<std::size_t> probe(in.numel());
    std::iota(probe.begin(), probe.end(), std::size_t{0});
    if (options.max_elements_per_input > 0 && probe.size() > options.max_elements_per_input) {
      for (std::size_t i = 0; i < options.max_elements_per_input; ++i) {
        std::swap(probe[i], probe[i + uniform_index(c.rng(), probe.size() - i)]);
      }
      probe.resize(options.max_elements_per_input);
      std::sort(probe.begin(), probe.end());
    }
    for (std::size_t i : probe) {
      auto values = in.mutable_values();
      const double saved = values[i];
      const Probe p = c.probe([&](double sign) { values[i] = saved + sign * h; }, [&] { values[i] = saved; });
      if (!p.smooth) {
        ++result.skipped_nonsmooth;
        continue;
      }
      c.score(result, analytic[i], (p.up - p.down) / (2.0 * h), k, i);
    }
  }
}

void check_directions(Checker& c, std::vector<Tensor<double>>& inputs, const GradCheckOptions& options,
                      GradCheckResult& result) {
  if (!options.groups.empty() && options.groups.size() != inputs.size()) {
    throw ShapeError("grad_check: one group id is needed per input");
  }
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (inputs[k].requires_grad()) members[options.groups.empty() ? k : options.groups[k]].push_back(k);
  }
  const double h = options.step;
  for (const auto& [group, ids] : members) {
    std::vector<std::vector<double>> saved, grads;
    for (std::size_t k : ids) {
      saved.emplace_back(inputs[k].values().begin(), inputs[k].values().end());
      grads.emplace_back(inputs[k].grad().begin(), inputs[k].grad().end());
    }
    std::size_t accepted = 0;
    for (std::size_t attempt = 0; accepted < options.directions && attempt < 8 * options.directions; ++attempt) {
      std::vector<std::vector<double>> dir(ids.size());
      double norm2 = 0.0;
      for (std::size_t j = 0; j < ids.size(); ++j) {
        dir[j].resize(saved[j].size());
        for (auto& v : dir[j]) {
          v = standard_normal(c.rng());
          norm2 += v * v;
        }
      }
      const double inv = 1.0 / std::sqrt(norm2);
      double analytic = 0.0;
      for (std::size_t j = 0; j < ids.size(); ++j)
        for (std::size_t i = 0; i < dir[j].size(); ++i) {
          dir[j][i] *= inv;
          analytic += grads[j][i] * dir[j][i];
        }
      const Probe p = c.probe(
          [&](double sign) {
            for (std::size_t j = 0; j < ids.size(); ++j) {
              auto values = inputs[ids[j]].mutable_values();
              for (std::size_t i = 0; i < values.size(); ++i) values[i] = saved[j][i] + sign * h * dir[j][i];
            }
          },
          [&] {
            for (std::size_t j = 0; j < ids.size(); ++j) {
              std::copy(saved[j].begin(), saved[j].end(), inputs[ids[j]].mutable_values().begin());
            }
          });
      if (!p.smooth) {
        ++result.skipped_nonsmooth;
        continue;
      }
      c.score(result, analytic, (p.up - p.down) / (2.0 * h), group, accepted);
      ++accepted;
    }
  }
}

}  // namespace

GradCheckResult grad_check(const GradCheckFn& op, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options) {
  Checker checker(op, inputs, options);
  for (auto& in : inputs) in.zero_grad();
  backward(checker.scalar_of(op(inputs)));

  GradCheckResult result;
  NoGradGuard no_grad;
  if (options.directions > 0) {
    check_directions(checker, inputs, options, result);
  } else {
    check_elements(checker, inputs, options, result);
  }
  return result;
}

}  // namespace osteovox::nn
