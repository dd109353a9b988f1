#pragma once

// Full-model gradient verification shared by the unit and acceptance suites.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "osteovox/nn/grad_check.hpp"
#include "osteovox/random.hpp"
#include "osteovox/transvnet.hpp"

namespace oracle {

inline osteovox::transvnet::ModelConfig grad_check_config() {
  osteovox::transvnet::ModelConfig c;
  c.input_resolution = 16;
  c.cnn_downscalings = 2;
  c.cnn_channels = 4;
  c.patch_size = 2;
  c.hidden_dim = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.mlp_dim = 32;
  return c;
}

struct ModelGradCheck {
  osteovox::nn::GradCheckResult result;
  std::vector<std::string> groups;  // result.worst_input indexes this
};

inline bool ends_with(const std::string& s, const std::string& tail) {
  return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
}

/// Central-difference check of the combined loss of a train-mode forward pass
/// with respect to every parameter, at 64-bit.
///
/// The model is evaluated at a generic point: continuous random input and
/// random biases, norm scales and embeddings, so every ReLU sits away from its
/// kink and every stage carries a non-negligible gradient. Each model stage
/// (encoder level, embedding, transformer layer, decoder block, head) is
/// probed along `directions` random unit directions of its joint parameter
/// vector; probes whose stencil crosses a ReLU or max-pool branch change are
/// redrawn.
inline ModelGradCheck full_model_grad_check(std::uint64_t seed, std::size_t directions = 4,
                                            double step = 1e-6) {
  using namespace osteovox;
  using namespace osteovox::transvnet;
  const ModelConfig c = grad_check_config();
  const std::size_t batch = 2, h = c.input_resolution, vol = h * h * h;

  TransVNetParams<double> params(c, seed);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  for (auto& [name, t] : params.named()) {
    const bool norm = name.find(".bn") != std::string::npos || name.find(".ln") != std::string::npos;
    auto values = t.mutable_values();
    if (norm && ends_with(name, ".weight")) {
      for (auto& v : values) v = 1.0 + 0.3 * standard_normal(rng);
    } else if (ends_with(name, ".bias")) {
      for (auto& v : values) v = 0.3 * standard_normal(rng);
    } else if (name.rfind("embed.position", 0) == 0 || name.rfind("embed.time", 0) == 0) {
      for (auto& v : values) v = 0.5 * standard_normal(rng);
    }
  }
  params.set_requires_grad(true);

  std::vector<std::uint8_t> labels(batch * vol);
  for (auto& l : labels) l = uniform_index(rng, 10) < 4 ? 1 : 0;
  std::vector<double> x(batch * c.in_channels * vol);
  for (auto& v : x) v = standard_normal(rng);
  const Tensor<double> input({batch, c.in_channels, h, h, h}, std::move(x));

  ModelGradCheck out;
  std::vector<Tensor<double>> inputs;
  nn::GradCheckOptions opt;
  opt.seed = seed;
  opt.step = step;
  opt.directions = directions;
  opt.skip_nonsmooth = true;
  for (auto& [name, t] : params.named()) {
    const auto d1 = name.find('.');
    std::string group = name.substr(0, name.find('.', d1 + 1));
    if (name.rfind("embed", 0) == 0 || name.rfind("head", 0) == 0) group = name.substr(0, d1);
    auto it = std::find(out.groups.begin(), out.groups.end(), group);
    if (it == out.groups.end()) it = out.groups.insert(out.groups.end(), group);
    opt.groups.push_back(static_cast<std::size_t>(it - out.groups.begin()));
    inputs.push_back(t);
  }
  const std::vector<double> months{2.0, 9.0};
  out.result = nn::grad_check(
      [&](const std::vector<Tensor<double>>&) {
        return loss(forward(input, months, params, Mode::Train), labels).total;
      },
      inputs, opt);
  return out;
}

}  // namespace oracle
