#pragma once
// Elementwise activations, batch normalization and the dense layer.

#include <cstddef>
#include <vector>

#include "mdpet/tensor.hpp"

namespace mdpet::nn {

enum class Mode { Train, Eval };

inline constexpr double kLeakySlope = 0.2;

/// max(x, slope * x) for slope in [0, 1). The derivative at 0 takes the
/// negative branch.
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope);

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& input, T slope, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  return leaky_relu(input, T{0});
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  return leaky_relu_backward(input, T{0}, grad_out);
}

template <typename T>
struct BatchNormState {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);

  explicit BatchNormState(std::size_t channels = 1)
      : gamma({channels}, T{1}),
        beta({channels}, T{0}),
        running_mean({channels}, T{0}),
        running_var({channels}, T{1}) {}

  std::size_t channels() const { return gamma.size(); }
};

/// What backward needs from a forward pass.
template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;    // x_hat
  std::vector<T> inv_std;  // per channel
  Mode mode = Mode::Eval;
};

/// Per-channel normalization of x[N, C, H, W]. Train mode uses batch
/// statistics and updates the running estimates (unbiased variance); eval
/// mode uses the running estimates.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, BatchNormState<T>& state, Mode mode,
                      BatchNormCache<T>* cache = nullptr);

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm2d_backward(const BatchNormCache<T>& cache,
                                       const BatchNormState<T>& state, const Tensor<T>& grad_out);

/// input[N, D] * weight[D, K] + bias[K].
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
LinearGrads<T> fully_connected_backward(const Tensor<T>& input, const Tensor<T>& weight,
                                        const Tensor<T>& grad_out);

}  // namespace mdpet::nn
