#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mdpet/tensor.hpp"

namespace mdpet::nn {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment estimates for an ordered list of parameter tensors.
/// Slots are bound to parameters by position on the first step.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  explicit AdamState(AdamConfig cfg = {}) : config(cfg) {}
};

/// One Adam update of every parameter from its gradient buffer. Throws
/// ValidationError naming the parameter when a gradient is missing or
/// non-finite; in that case no parameter is modified.
template <typename T>
void adam_step(std::span<const ParamRef<T>> params, AdamState<T>& state);

}  // namespace mdpet::nn
