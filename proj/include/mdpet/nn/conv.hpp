#pragma once

#include <cstddef>
#include <utility>

#include "mdpet/tensor.hpp"

namespace mdpet::nn {

/// Geometry of a (transposed) convolution. Two recipes are admissible:
/// 4x4 stride-2 pad-1 sampling blocks and 3x3 stride-1 pad-1 residual convs.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 4;
  std::size_t stride = 2;
  std::size_t padding = 1;
  bool transposed = false;

  static ConvSpec down(std::size_t in, std::size_t out) { return {in, out, 4, 2, 1, false}; }
  static ConvSpec up(std::size_t in, std::size_t out) { return {in, out, 4, 2, 1, true}; }
  static ConvSpec same(std::size_t in, std::size_t out) { return {in, out, 3, 1, 1, false}; }

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

void validate(const ConvSpec& spec);

/// [out, in, k, k] for convolutions, [in, out, k, k] for transposed ones.
Shape weight_shape(const ConvSpec& spec);

/// Output spatial size for an input of h x w.
std::pair<std::size_t, std::size_t> output_hw(const ConvSpec& spec, std::size_t h, std::size_t w);

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

/// Cross-correlation of x[N, C_in, H, W] with weights[C_out, C_in, k, k] plus bias[C_out].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weight,
                 const Tensor<T>& bias);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weight,
                             const Tensor<T>& grad_out);

/// Transposed convolution (the adjoint of conv2d's input map) with weights
/// [C_in, C_out, k, k]; a (4,2,1) spec doubles H and W.
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weight,
                   const Tensor<T>& bias);

template <typename T>
ConvGrads<T> deconv2d_backward(const Tensor<T>& input, const ConvSpec& spec,
                               const Tensor<T>& weight, const Tensor<T>& grad_out);

}  // namespace mdpet::nn
