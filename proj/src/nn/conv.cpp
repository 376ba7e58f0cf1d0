#include "mdpet/nn/conv.hpp"

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "mdpet/simd/kernels.hpp"

namespace mdpet::nn {
namespace {

using simd::Trans;

struct Geometry {
  std::size_t batch, channels, height, width;  // image side
  std::size_t kernel, stride, padding;
  std::size_t grid_h, grid_w;                  // column side
  std::size_t grid() const { return grid_h * grid_w; }
  std::size_t rows() const { return channels * kernel * kernel; }
  std::size_t cols() const { return batch * grid(); }
};

// Output columns ox whose tap ox*s - p + k lands inside [0, extent).
std::pair<std::size_t, std::size_t> valid_range(std::size_t grid, std::size_t extent, std::size_t stride,
                                                std::size_t padding, std::size_t k) {
  const long s = static_cast<long>(stride);
  const long off = static_cast<long>(k) - static_cast<long>(padding);
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long hi = (static_cast<long>(extent) - 1 - off) / s + 1;  // exclusive
  if (static_cast<long>(extent) - 1 - off < 0) hi = 0;
  hi = std::min(hi, static_cast<long>(grid));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// col[(c, ky, kx)][(n, oy, ox)] = img[n, c, oy*s - p + ky, ox*s - p + kx], zero outside.
template <typename T>
void im2col(const T* img, const Geometry& g, T* col) {
  const std::size_t ncols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* dst = col + ((c * g.kernel + ky) * g.kernel + kx) * ncols;
        const auto [lo, hi] = valid_range(g.grid_w, g.width, g.stride, g.padding, kx);
        for (std::size_t n = 0; n < g.batch; ++n) {
          const T* plane = img + (n * g.channels + c) * g.height * g.width;
          for (std::size_t oy = 0; oy < g.grid_h; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
            T* out = dst + n * g.grid() + oy * g.grid_w;
            if (iy < 0 || iy >= static_cast<long>(g.height)) {
              std::fill(out, out + g.grid_w, T{0});
              continue;
            }
            std::fill(out, out + lo, T{0});
            std::fill(out + hi, out + g.grid_w, T{0});
            const T* src = plane + static_cast<std::size_t>(iy) * g.width + lo * g.stride + kx - g.padding;
            if (g.stride == 1) {
              std::copy(src, src + (hi - lo), out + lo);
            } else {
              for (std::size_t ox = lo; ox < hi; ++ox, src += g.stride) out[ox] = *src;
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into a zeroed image.
template <typename T>
void col2im(const T* col, const Geometry& g, T* img) {
  const std::size_t ncols = g.cols();
  std::fill(img, img + g.batch * g.channels * g.height * g.width, T{0});
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* src = col + ((c * g.kernel + ky) * g.kernel + kx) * ncols;
        const auto [lo, hi] = valid_range(g.grid_w, g.width, g.stride, g.padding, kx);
        for (std::size_t n = 0; n < g.batch; ++n) {
          T* plane = img + (n * g.channels + c) * g.height * g.width;
          for (std::size_t oy = 0; oy < g.grid_h; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
            if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
            T* row = plane + static_cast<std::size_t>(iy) * g.width + lo * g.stride + kx - g.padding;
            const T* in = src + n * g.grid() + oy * g.grid_w;
            for (std::size_t ox = lo; ox < hi; ++ox, row += g.stride) *row += in[ox];
          }
        }
      }
    }
  }
}

// Reusable per-thread buffers; contents are unspecified on return.
template <typename T>
T* scratch(int slot, std::size_t count) {
  thread_local std::array<std::vector<T>, 3> buffers;
  auto& b = buffers[static_cast<std::size_t>(slot)];
  if (b.size() < count) b.resize(count);
  return b.data();
}

// [N, C, L] <-> [C, N*L]
template <typename T>
std::vector<T> to_channel_major(std::span<const T> x, std::size_t n, std::size_t c, std::size_t l) {
  std::vector<T> out(n * c * l);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::copy_n(x.data() + (b * c + ch) * l, l, out.data() + ch * n * l + b * l);
    }
  }
  return out;
}

template <typename T>
void from_channel_major(const T* cm, std::size_t n, std::size_t c, std::size_t l, T* x) {
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::copy_n(cm + ch * n * l + b * l, l, x + (b * c + ch) * l);
    }
  }
}

template <typename T>
Tensor<T> channel_sums(const Tensor<T>& grad_out) {
  const std::size_t n = grad_out.dim(0), c = grad_out.dim(1), l = grad_out.dim(2) * grad_out.dim(3);
  Tensor<T> out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    T acc{0};
    for (std::size_t b = 0; b < n; ++b) {
      const T* p = grad_out.data().data() + (b * c + ch) * l;
      for (std::size_t i = 0; i < l; ++i) acc += p[i];
    }
    out[ch] = acc;
  }
  return out;
}

void check_input(const char* op, const ConvSpec& spec, const Shape& x) {
  if (x.size() != 4) {
    throw ShapeError(std::string(op) + ": expected a rank-4 NCHW input, got " + format_shape(x));
  }
  if (x[1] != spec.in_channels) {
    throw ShapeError(std::string(op) + ": expected " + std::to_string(spec.in_channels) +
                     " input channels, got " + std::to_string(x[1]) + " (input " + format_shape(x) + ")");
  }
  if (x[2] == 0 || x[3] == 0) {
    throw ShapeError(std::string(op) + ": empty spatial extent in input " + format_shape(x));
  }
  // A transposed (4,2,1) layer maps any H >= 1 to 2H; only the forward
  // direction needs the kernel to fit inside the padded input.
  if (!spec.transposed && (x[2] + 2 * spec.padding < spec.kernel || x[3] + 2 * spec.padding < spec.kernel)) {
    throw ShapeError(std::string(op) + ": padded input " + format_shape(x) +
                     " is smaller than the " + std::to_string(spec.kernel) + "x" +
                     std::to_string(spec.kernel) + " kernel");
  }
}

template <typename T>
void check_params(const char* op, const ConvSpec& spec, const Tensor<T>& weight,
                  const Tensor<T>& bias) {
  require_same_shape((std::string(op) + " weight").c_str(), weight_shape(spec), weight.shape());
  require_same_shape((std::string(op) + " bias").c_str(), {spec.out_channels}, bias.shape());
}

Geometry conv_geometry(const ConvSpec& spec, const Shape& x) {
  const auto [ho, wo] = output_hw(spec, x[2], x[3]);
  return {x[0], x[1], x[2], x[3], spec.kernel, spec.stride, spec.padding, ho, wo};
}

// The deconv "image" is its output; the column grid is its input.
Geometry deconv_geometry(const ConvSpec& spec, const Shape& x) {
  const auto [ho, wo] = output_hw(spec, x[2], x[3]);
  return {x[0], spec.out_channels, ho, wo, spec.kernel, spec.stride, spec.padding, x[2], x[3]};
}

}  // namespace

void validate(const ConvSpec& spec) {
  if (spec.in_channels == 0 || spec.out_channels == 0) {
    throw ValidationError("ConvSpec: channel counts must be positive");
  }
  const bool sampling = spec.kernel == 4 && spec.stride == 2 && spec.padding == 1;
  const bool residual = spec.kernel == 3 && spec.stride == 1 && spec.padding == 1 && !spec.transposed;
  if (!sampling && !residual) {
    throw ValidationError("ConvSpec: (kernel, stride, padding) = (" + std::to_string(spec.kernel) +
                          ", " + std::to_string(spec.stride) + ", " + std::to_string(spec.padding) +
                          ") is not one of (4,2,1) or non-transposed (3,1,1)");
  }
}

Shape weight_shape(const ConvSpec& spec) {
  if (spec.transposed) return {spec.in_channels, spec.out_channels, spec.kernel, spec.kernel};
  return {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
}

std::pair<std::size_t, std::size_t> output_hw(const ConvSpec& spec, std::size_t h, std::size_t w) {
  if (spec.transposed) {
    return {(h - 1) * spec.stride + spec.kernel - 2 * spec.padding,
            (w - 1) * spec.stride + spec.kernel - 2 * spec.padding};
  }
  return {(h + 2 * spec.padding - spec.kernel) / spec.stride + 1,
          (w + 2 * spec.padding - spec.kernel) / spec.stride + 1};
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  validate(spec);
  if (spec.transposed) throw ValidationError("conv2d: spec is transposed; use deconv2d");
  check_input("conv2d", spec, input.shape());
  check_params("conv2d", spec, weight, bias);

  const Geometry g = conv_geometry(spec, input.shape());
  T* col = scratch<T>(0, g.rows() * g.cols());
  im2col(input.data().data(), g, col);

  T* out_cm = scratch<T>(1, spec.out_channels * g.cols());
  simd::gemm<T>(Trans::No, Trans::No, spec.out_channels, g.cols(), g.rows(), weight.data().data(),
                g.rows(), col, g.cols(), out_cm, g.cols(), false);

  Tensor<T> out({g.batch, spec.out_channels, g.grid_h, g.grid_w});
  from_channel_major(out_cm, g.batch, spec.out_channels, g.grid(), out.data().data());
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < spec.out_channels; ++co) {
      T* p = out.data().data() + (n * spec.out_channels + co) * g.grid();
      for (std::size_t i = 0; i < g.grid(); ++i) p[i] += bias[co];
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weight,
                             const Tensor<T>& grad_out) {
  validate(spec);
  check_input("conv2d_backward", spec, input.shape());
  const Geometry g = conv_geometry(spec, input.shape());
  require_same_shape("conv2d_backward grad_out", {g.batch, spec.out_channels, g.grid_h, g.grid_w},
                     grad_out.shape());
  require_same_shape("conv2d_backward weight", weight_shape(spec), weight.shape());

  ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(weight.shape()), channel_sums(grad_out)};

  const auto go = to_channel_major<T>(grad_out.data(), g.batch, spec.out_channels, g.grid());
  T* col = scratch<T>(0, g.rows() * g.cols());
  im2col(input.data().data(), g, col);

  simd::gemm<T>(Trans::No, Trans::Yes, spec.out_channels, g.rows(), g.cols(), go.data(), g.cols(),
                col, g.cols(), grads.weight.data().data(), g.rows(), false);

  simd::gemm<T>(Trans::Yes, Trans::No, g.rows(), g.cols(), spec.out_channels,
                weight.data().data(), g.rows(), go.data(), g.cols(), col, g.cols(), false);
  col2im(col, g, grads.input.data().data());
  return grads;
}

template <typename T>
Tensor<T> deconv2d(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weight,
                   const Tensor<T>& bias) {
  validate(spec);
  if (!spec.transposed) throw ValidationError("deconv2d: spec must be transposed");
  check_input("deconv2d", spec, input.shape());
  check_params("deconv2d", spec, weight, bias);

  const Geometry g = deconv_geometry(spec, input.shape());
  const auto xm = to_channel_major<T>(input.data(), g.batch, spec.in_channels, g.grid());
  T* col = scratch<T>(0, g.rows() * g.cols());
  simd::gemm<T>(Trans::Yes, Trans::No, g.rows(), g.cols(), spec.in_channels, weight.data().data(),
                g.rows(), xm.data(), g.cols(), col, g.cols(), false);

  Tensor<T> out({g.batch, spec.out_channels, g.height, g.width});
  col2im(col, g, out.data().data());
  const std::size_t plane = g.height * g.width;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < spec.out_channels; ++co) {
      T* p = out.data().data() + (n * spec.out_channels + co) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bias[co];
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> deconv2d_backward(const Tensor<T>& input, const ConvSpec& spec,
                               const Tensor<T>& weight, const Tensor<T>& grad_out) {
  validate(spec);
  check_input("deconv2d_backward", spec, input.shape());
  const Geometry g = deconv_geometry(spec, input.shape());
  require_same_shape("deconv2d_backward grad_out", {g.batch, spec.out_channels, g.height, g.width},
                     grad_out.shape());
  require_same_shape("deconv2d_backward weight", weight_shape(spec), weight.shape());

  ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(weight.shape()), channel_sums(grad_out)};

  T* gcol = scratch<T>(0, g.rows() * g.cols());
  im2col(grad_out.data().data(), g, gcol);
  const auto xm = to_channel_major<T>(input.data(), g.batch, spec.in_channels, g.grid());

  simd::gemm<T>(Trans::No, Trans::Yes, spec.in_channels, g.rows(), g.cols(), xm.data(), g.cols(),
                gcol, g.cols(), grads.weight.data().data(), g.rows(), false);

  T* gx = scratch<T>(1, spec.in_channels * g.cols());
  simd::gemm<T>(Trans::No, Trans::No, spec.in_channels, g.cols(), g.rows(), weight.data().data(),
                g.rows(), gcol, g.cols(), gx, g.cols(), false);
  from_channel_major(gx, g.batch, spec.in_channels, g.grid(), grads.input.data().data());
  return grads;
}

#define MDPET_INSTANTIATE_CONV(T)                                                              \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const ConvSpec&, const Tensor<T>&,            \
                               const Tensor<T>&);                                              \
  template ConvGrads<T> conv2d_backward<T>(const Tensor<T>&, const ConvSpec&, const Tensor<T>&, \
                                           const Tensor<T>&);                                  \
  template Tensor<T> deconv2d<T>(const Tensor<T>&, const ConvSpec&, const Tensor<T>&,          \
                                 const Tensor<T>&);                                            \
  template ConvGrads<T> deconv2d_backward<T>(const Tensor<T>&, const ConvSpec&,                \
                                             const Tensor<T>&, const Tensor<T>&);

MDPET_INSTANTIATE_CONV(float)
MDPET_INSTANTIATE_CONV(double)

#undef MDPET_INSTANTIATE_CONV

}  // namespace mdpet::nn
