#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "osteovox/nn/tensor.hpp"

namespace osteovox::nn {

using GradCheckFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

struct GradCheckOptions {
  double step = 1e-5;
  // Elements probed per input; 0 probes every element.
  std::size_t max_elements_per_input = 0;
  std::uint64_t seed = 0;
  // When positive, probe this many random unit directions per group instead
  // of single elements. The analytic value is the gradient dotted with the
  // direction.
  std::size_t directions = 0;
  // Group id per input for direction probes; empty gives every input its own
  // group.
  std::vector<std::size_t> groups;
  // Skip probes whose +step and -step evaluations take different relu or
  // max-pool branches: the function has a kink inside the stencil there and
  // central differences do not estimate a derivative. Direction probes are
  // redrawn (up to 8 attempts per accepted probe).
  bool skip_nonsmooth = false;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  // Input index, or group id for direction probes.
  std::size_t worst_input = 0;
  // Element index, or direction number within the group.
  std::size_t worst_element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t probes = 0;
  std::size_t skipped_nonsmooth = 0;
};

/// Compares reverse-mode gradients with central differences. Non-scalar
/// outputs are reduced to sum(out * R) with a fixed random R. Relative error
/// is |a - n| / max(|a|, |n|, 1e-8). Inputs must be leaves requiring grad;
/// their values are restored afterwards.
GradCheckResult grad_check(const GradCheckFn& op, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options = {});

}  // namespace osteovox::nn
