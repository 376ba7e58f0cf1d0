#include "mdpet/nn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mdpet::nn {

template <typename T>
LossValue<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape("mse_loss", target.shape(), pred.shape());
  const T n = static_cast<T>(pred.size());
  LossValue<T> out{T{0}, Tensor<T>(pred.shape())};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred[i] - target[i];
    out.value += d * d;
    out.grad[i] = T{2} * d / n;
  }
  out.value /= n;
  return out;
}

template <typename T>
LossValue<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape("l1_loss", target.shape(), pred.shape());
  const T n = static_cast<T>(pred.size());
  LossValue<T> out{T{0}, Tensor<T>(pred.shape())};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred[i] - target[i];
    out.value += std::abs(d);
    out.grad[i] = (d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0})) / n;
  }
  out.value /= n;
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax: expected logits[N, m], got " + format_shape(logits.shape()));
  }
  const std::size_t n = logits.dim(0), m = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.data().data() + i * m;
    T* prob = out.data().data() + i * m;
    const T mx = *std::max_element(row, row + m);
    T sum{0};
    for (std::size_t k = 0; k < m; ++k) {
      prob[k] = std::exp(row[k] - mx);
      sum += prob[k];
    }
    for (std::size_t k = 0; k < m; ++k) prob[k] /= sum;
  }
  return out;
}

template <typename T>
LossValue<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& labels) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax_cross_entropy: expected logits[N, m], got " +
                     format_shape(logits.shape()));
  }
  require_same_shape("softmax_cross_entropy labels", logits.shape(), labels.shape());
  const std::size_t n = logits.dim(0), m = logits.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t ones = 0;
    for (std::size_t k = 0; k < m; ++k) {
      const T y = labels[i * m + k];
      if (y == T{1}) {
        ++ones;
      } else if (y != T{0}) {
        ones = 2;
        break;
      }
    }
    if (ones != 1) {
      throw ValidationError("softmax_cross_entropy: label row " + std::to_string(i) +
                            " is not one-hot");
    }
  }

  LossValue<T> out{T{0}, softmax(logits)};
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.data().data() + i * m;
    const T mx = *std::max_element(row, row + m);
    T sum{0};
    for (std::size_t k = 0; k < m; ++k) sum += std::exp(row[k] - mx);
    const T log_norm = mx + std::log(sum);
    for (std::size_t k = 0; k < m; ++k) {
      const T y = labels[i * m + k];
      if (y != T{0}) out.value -= y * (row[k] - log_norm);
      out.grad[i * m + k] = (out.grad[i * m + k] - y) / static_cast<T>(n);
    }
  }
  out.value /= static_cast<T>(n);
  return out;
}

template <typename T>
Tensor<T> one_hot(std::span<const int> classes, std::size_t num_classes) {
  Tensor<T> out({classes.size(), num_classes});
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] < 0 || static_cast<std::size_t>(classes[i]) >= num_classes) {
      throw ValidationError("one_hot: class " + std::to_string(classes[i]) + " outside [0, " +
                            std::to_string(num_classes) + ")");
    }
    out[i * num_classes + static_cast<std::size_t>(classes[i])] = T{1};
  }
  return out;
}

#define MDPET_INSTANTIATE_LOSS(T)                                                     \
  template LossValue<T> mse_loss<T>(const Tensor<T>&, const Tensor<T>&);              \
  template LossValue<T> l1_loss<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                    \
  template LossValue<T> softmax_cross_entropy<T>(const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> one_hot<T>(std::span<const int>, std::size_t);

MDPET_INSTANTIATE_LOSS(float)
MDPET_INSTANTIATE_LOSS(double)

#undef MDPET_INSTANTIATE_LOSS

}  // namespace mdpet::nn
