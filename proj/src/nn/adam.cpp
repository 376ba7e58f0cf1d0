#include "mdpet/nn/adam.hpp"

#include <cmath>
#include <string>

#include "mdpet/simd/kernels.hpp"

namespace mdpet::nn {

template <typename T>
void adam_step(std::span<const ParamRef<T>> params, AdamState<T>& state) {
  const auto& cfg = state.config;
  if (!(cfg.lr > 0.0) || !(cfg.beta1 > 0.0 && cfg.beta1 < 1.0) ||
      !(cfg.beta2 > 0.0 && cfg.beta2 < 1.0) || !(cfg.epsilon > 0.0)) {
    throw ValidationError("adam_step: invalid optimizer configuration");
  }
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].tensor->size(), T{0});
      state.v[i].assign(params[i].tensor->size(), T{0});
    }
  }
  if (state.m.size() != params.size()) {
    throw ValidationError("adam_step: optimizer tracks " + std::to_string(state.m.size()) +
                          " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (state.m[i].size() != p.tensor->size()) {
      throw ShapeError("adam_step: moment length mismatch for parameter '" + p.name + "'");
    }
    if (!p.tensor->has_grad()) {
      throw ValidationError("adam_step: parameter '" + p.name + "' has no gradient");
    }
    for (const T g : p.tensor->grad()) {
      if (!std::isfinite(g)) {
        throw ValidationError("adam_step: non-finite gradient in parameter '" + p.name + "'");
      }
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const simd::AdamCoeffs<T> coeffs{static_cast<T>(cfg.lr),
                                   static_cast<T>(cfg.beta1),
                                   static_cast<T>(cfg.beta2),
                                   static_cast<T>(cfg.epsilon),
                                   static_cast<T>(1.0 - std::pow(cfg.beta1, t)),
                                   static_cast<T>(1.0 - std::pow(cfg.beta2, t))};
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& tensor = *params[i].tensor;
    simd::adam_update<T>(tensor.data(), std::span<const T>(tensor.grad()), state.m[i], state.v[i],
                         coeffs);
  }
}

template void adam_step<float>(std::span<const ParamRef<float>>, AdamState<float>&);
template void adam_step<double>(std::span<const ParamRef<double>>, AdamState<double>&);

}  // namespace mdpet::nn
