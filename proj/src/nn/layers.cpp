#include "mdpet/nn/layers.hpp"

#include <cmath>
#include <string>

#include "mdpet/simd/kernels.hpp"

namespace mdpet::nn {
namespace {

void check_slope(double slope) {
  if (!(slope >= 0.0 && slope < 1.0)) {
    throw ValidationError("leaky_relu: slope must lie in [0, 1), got " + std::to_string(slope));
  }
}

void check_nchw(const char* op, const Shape& shape) {
  if (shape.size() != 4) {
    throw ShapeError(std::string(op) + ": expected a rank-4 NCHW tensor, got " + format_shape(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope) {
  check_slope(static_cast<double>(slope));
  Tensor<T> out(input.shape());
  const auto x = input.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : slope * x[i];
  return out;
}

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& input, T slope, const Tensor<T>& grad_out) {
  check_slope(static_cast<double>(slope));
  require_same_shape("leaky_relu_backward", input.shape(), grad_out.shape());
  Tensor<T> out(input.shape());
  const auto x = input.data();
  const auto g = grad_out.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? g[i] : slope * g[i];
  return out;
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, BatchNormState<T>& state, Mode mode,
                      BatchNormCache<T>* cache) {
  check_nchw("batchnorm2d", input.shape());
  const std::size_t n = input.dim(0), c = input.dim(1), l = input.dim(2) * input.dim(3);
  if (c != state.channels()) {
    throw ShapeError("batchnorm2d: state has " + std::to_string(state.channels()) +
                     " channels, input " + format_shape(input.shape()));
  }
  const std::size_t population = n * l;
  if (mode == Mode::Train && population < 2) {
    throw ValidationError("batchnorm2d: train mode needs at least 2 values per channel, input " +
                          format_shape(input.shape()));
  }

  Tensor<T> out(input.shape());
  Tensor<T> normalized(input.shape());
  std::vector<T> inv_std(c);
  const T* x = input.data().data();

  for (std::size_t ch = 0; ch < c; ++ch) {
    T mean, var;
    if (mode == Mode::Train) {
      T sum{0};
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x + (b * c + ch) * l;
        for (std::size_t i = 0; i < l; ++i) sum += p[i];
      }
      mean = sum / static_cast<T>(population);
      T sq{0};
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x + (b * c + ch) * l;
        for (std::size_t i = 0; i < l; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / static_cast<T>(population);
      const T unbiased = sq / static_cast<T>(population - 1);
      state.running_mean[ch] = (T{1} - state.momentum) * state.running_mean[ch] + state.momentum * mean;
      state.running_var[ch] = (T{1} - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
    } else {
      mean = state.running_mean[ch];
      var = state.running_var[ch];
    }
    const T istd = T{1} / std::sqrt(var + state.epsilon);
    inv_std[ch] = istd;
    const T g = state.gamma[ch], bt = state.beta[ch];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * l;
      for (std::size_t i = 0; i < l; ++i) {
        const T xh = (x[off + i] - mean) * istd;
        normalized[off + i] = xh;
        out[off + i] = g * xh + bt;
      }
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm2d_backward(const BatchNormCache<T>& cache,
                                       const BatchNormState<T>& state, const Tensor<T>& grad_out) {
  require_same_shape("batchnorm2d_backward", cache.normalized.shape(), grad_out.shape());
  const std::size_t n = grad_out.dim(0), c = grad_out.dim(1), l = grad_out.dim(2) * grad_out.dim(3);
  const T count = static_cast<T>(n * l);
  BatchNormGrads<T> grads{Tensor<T>(grad_out.shape()), Tensor<T>({c}), Tensor<T>({c})};
  const T* go = grad_out.data().data();
  const T* xh = cache.normalized.data().data();

  for (std::size_t ch = 0; ch < c; ++ch) {
    T sum_g{0}, sum_gx{0};
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * l;
      for (std::size_t i = 0; i < l; ++i) {
        sum_g += go[off + i];
        sum_gx += go[off + i] * xh[off + i];
      }
    }
    grads.beta[ch] = sum_g;
    grads.gamma[ch] = sum_gx;
    const T scale = state.gamma[ch] * cache.inv_std[ch];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * l;
      for (std::size_t i = 0; i < l; ++i) {
        if (cache.mode == Mode::Train) {
          grads.input[off + i] = scale * (go[off + i] - sum_g / count - xh[off + i] * sum_gx / count);
        } else {
          grads.input[off + i] = scale * go[off + i];
        }
      }
    }
  }
  return grads;
}

template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || bias.rank() != 1) {
    throw ShapeError("fully_connected: expected input[N, D], weight[D, K], bias[K]; got " +
                     format_shape(input.shape()) + ", " + format_shape(weight.shape()) + ", " +
                     format_shape(bias.shape()));
  }
  const std::size_t n = input.dim(0), d = input.dim(1), k = weight.dim(1);
  require_same_shape("fully_connected weight", {d, k}, weight.shape());
  require_same_shape("fully_connected bias", {k}, bias.shape());
  Tensor<T> out({n, k});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(bias.data().data(), k, out.data().data() + i * k);
  simd::gemm<T>(simd::Trans::No, simd::Trans::No, n, k, d, input.data().data(), d,
                weight.data().data(), k, out.data().data(), k, true);
  return out;
}

template <typename T>
LinearGrads<T> fully_connected_backward(const Tensor<T>& input, const Tensor<T>& weight,
                                        const Tensor<T>& grad_out) {
  const std::size_t n = input.dim(0), d = input.dim(1), k = weight.dim(1);
  require_same_shape("fully_connected_backward grad_out", {n, k}, grad_out.shape());
  LinearGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(weight.shape()), Tensor<T>({k})};
  for (std::size_t j = 0; j < k; ++j) {
    T acc{0};
    for (std::size_t i = 0; i < n; ++i) acc += grad_out[i * k + j];
    grads.bias[j] = acc;
  }
  simd::gemm<T>(simd::Trans::Yes, simd::Trans::No, d, k, n, input.data().data(), d,
                grad_out.data().data(), k, grads.weight.data().data(), k, false);
  simd::gemm<T>(simd::Trans::No, simd::Trans::Yes, n, d, k, grad_out.data().data(), k,
                weight.data().data(), k, grads.input.data().data(), d, false);
  return grads;
}

#define MDPET_INSTANTIATE_LAYERS(T)                                                              \
  template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                                         \
  template Tensor<T> leaky_relu_backward<T>(const Tensor<T>&, T, const Tensor<T>&);              \
  template Tensor<T> batchnorm2d<T>(const Tensor<T>&, BatchNormState<T>&, Mode,                  \
                                    BatchNormCache<T>*);                                         \
  template BatchNormGrads<T> batchnorm2d_backward<T>(const BatchNormCache<T>&,                   \
                                                     const BatchNormState<T>&, const Tensor<T>&); \
  template Tensor<T> fully_connected<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template LinearGrads<T> fully_connected_backward<T>(const Tensor<T>&, const Tensor<T>&,        \
                                                      const Tensor<T>&);

MDPET_INSTANTIATE_LAYERS(float)
MDPET_INSTANTIATE_LAYERS(double)

#undef MDPET_INSTANTIATE_LAYERS

}  // namespace mdpet::nn
