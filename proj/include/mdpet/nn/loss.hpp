#pragma once

#include <cstddef>
#include <span>

#include "mdpet/tensor.hpp"

namespace mdpet::nn {

/// A scalar loss together with its gradient w.r.t. the prediction.
template <typename T>
struct LossValue {
  T value{};
  Tensor<T> grad;
};

/// Mean over all elements of (pred - target)^2.
template <typename T>
LossValue<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// Mean over all elements of |pred - target|; sign(0) = 0 in the gradient.
template <typename T>
LossValue<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

/// Batch mean of -sum_k y_k log softmax(logits)_k. Labels must be one-hot rows.
template <typename T>
LossValue<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& labels);

/// [N, classes] one-hot rows for integer class indices.
template <typename T>
Tensor<T> one_hot(std::span<const int> classes, std::size_t num_classes);

}  // namespace mdpet::nn
