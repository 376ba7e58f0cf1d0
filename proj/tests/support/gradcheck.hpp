#pragma once
// Central-difference gradient checks in double precision, shared by the unit
// tests and the acceptance binary. Each case builds a random problem from a
// seed and returns the worst relative error over every checked coordinate.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mdpet/models.hpp"
#include "mdpet/nn/conv.hpp"
#include "mdpet/nn/layers.hpp"
#include "mdpet/nn/loss.hpp"
#include "mdpet/train.hpp"

namespace mdpet::testing {

inline constexpr double kStep = 1e-4;
// Denominator floor so coordinates with a vanishing gradient do not divide
// finite-difference noise by zero.
inline constexpr double kFloor = 1e-6;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kFloor});
}

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Values in +-[gap, 1]: keeps kinks of relu / |.| out of the difference stencil.
inline Tensor<double> away_from_zero(const Shape& shape, std::mt19937_64& rng, double gap = 1e-3) {
  std::uniform_real_distribution<double> u(gap, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = sign(rng) ? u(rng) : -u(rng);
  return t;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Compares analytic[i] with (f(x + h e_i) - f(x - h e_i)) / 2h. At most
/// max_coords coordinates are probed (all when 0), picked with rng.
inline double check_coords(Tensor<double>& x, std::span<const double> analytic,
                           const std::function<double()>& f, std::mt19937_64& rng,
                           std::size_t max_coords = 0, double step = kStep) {
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  if (max_coords > 0 && idx.size() > max_coords) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(max_coords);
  }
  double worst = 0.0;
  for (const auto i : idx) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f();
    x[i] = saved - step;
    const double down = f();
    x[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * step)));
  }
  return worst;
}

inline double conv_case(std::uint64_t seed, bool transposed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> small(1, 3);
  const bool same = !transposed && seed % 2 == 1;
  nn::ConvSpec spec = transposed ? nn::ConvSpec::up(small(rng), small(rng))
                                 : (same ? nn::ConvSpec::same(small(rng), small(rng))
                                         : nn::ConvSpec::down(small(rng), small(rng)));
  const std::size_t n = 1 + seed % 2;
  const std::size_t h = transposed ? 2 + seed % 3 : (same ? 3 + seed % 4 : 4 + 2 * (seed % 3));
  const std::size_t w = transposed ? 3 : (same ? 5 : 6);
  auto x = random_tensor({n, spec.in_channels, h, w}, rng);
  auto weight = random_tensor(nn::weight_shape(spec), rng);
  auto bias = random_tensor({spec.out_channels}, rng);
  const auto forward = [&] {
    return transposed ? nn::deconv2d(x, spec, weight, bias) : nn::conv2d(x, spec, weight, bias);
  };
  const auto upstream = random_tensor(forward().shape(), rng);
  const auto f = [&] { return dot(forward(), upstream); };
  const auto g = transposed ? nn::deconv2d_backward(x, spec, weight, upstream)
                            : nn::conv2d_backward(x, spec, weight, upstream);
  return std::max({check_coords(x, g.input.data(), f, rng), check_coords(weight, g.weight.data(), f, rng),
                   check_coords(bias, g.bias.data(), f, rng)});
}

inline double batchnorm_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Shape shape = seed % 2 == 0 ? Shape{2, 3, 4, 4} : Shape{1 + seed % 3, 2, 3, 2};
  auto x = random_tensor(shape, rng, -2.0, 2.0);
  nn::BatchNormState<double> state(shape[1]);
  state.gamma = random_tensor({shape[1]}, rng, 0.5, 1.5);
  state.beta = random_tensor({shape[1]}, rng);
  const auto upstream = random_tensor(shape, rng);
  const auto f = [&] { return dot(nn::batchnorm2d(x, state, nn::Mode::Train), upstream); };
  nn::BatchNormCache<double> cache;
  nn::batchnorm2d(x, state, nn::Mode::Train, &cache);
  const auto g = nn::batchnorm2d_backward(cache, state, upstream);
  return std::max({check_coords(x, g.input.data(), f, rng), check_coords(state.gamma, g.gamma.data(), f, rng),
                   check_coords(state.beta, g.beta.data(), f, rng)});
}

inline double leaky_relu_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double slope = seed % 2 == 0 ? nn::kLeakySlope : 0.0;
  auto x = away_from_zero({2, 2, 3, 1 + seed % 4}, rng);
  const auto upstream = random_tensor(x.shape(), rng);
  const auto f = [&] { return dot(nn::leaky_relu(x, slope), upstream); };
  const auto g = nn::leaky_relu_backward(x, slope, upstream);
  return check_coords(x, g.data(), f, rng);
}

inline double fully_connected_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t n = 1 + seed % 3, d = 2 + seed % 5, k = 1 + seed % 4;
  auto x = random_tensor({n, d}, rng);
  auto weight = random_tensor({d, k}, rng);
  auto bias = random_tensor({k}, rng);
  const auto upstream = random_tensor({n, k}, rng);
  const auto f = [&] { return dot(nn::fully_connected(x, weight, bias), upstream); };
  const auto g = nn::fully_connected_backward(x, weight, upstream);
  return std::max({check_coords(x, g.input.data(), f, rng), check_coords(weight, g.weight.data(), f, rng),
                   check_coords(bias, g.bias.data(), f, rng)});
}

inline double mse_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pred = random_tensor({2, 1, 3, 2 + seed % 3}, rng);
  const auto target = random_tensor(pred.shape(), rng);
  const auto g = nn::mse_loss(pred, target).grad;
  return check_coords(pred, g.data(), [&] { return nn::mse_loss(pred, target).value; }, rng);
}

inline double l1_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto target = random_tensor({2, 1, 3, 2 + seed % 3}, rng);
  auto pred = away_from_zero(target.shape(), rng);  // pred - target, shifted below
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] += target[i];
  const auto g = nn::l1_loss(pred, target).grad;
  return check_coords(pred, g.data(), [&] { return nn::l1_loss(pred, target).value; }, rng);
}

inline double softmax_ce_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t n = 1 + seed % 4, m = 3 + seed % 2;
  auto logits = random_tensor({n, m}, rng, -3.0, 3.0);
  std::vector<int> cls(n);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(m) - 1);
  for (auto& c : cls) c = pick(rng);
  const auto labels = nn::one_hot<double>(cls, m);
  const auto g = nn::softmax_cross_entropy(logits, labels).grad;
  return check_coords(logits, g.data(), [&] { return nn::softmax_cross_entropy(logits, labels).value; }, rng);
}

inline double residual_block_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t c = 1 + seed % 3;
  models::ResidualBlock<double> block(c);
  block.init(rng, 0.5);
  std::vector<ParamRef<double>> params;
  block.collect("res", params);
  auto x = random_tensor({2, c, 4, 3 + seed % 2}, rng);
  const auto upstream = random_tensor(x.shape(), rng);
  const auto f = [&] { return dot(block.forward(x), upstream); };

  for (auto& p : params) p.tensor->zero_grad();
  block.forward(x);
  const auto gx = block.backward(upstream);
  std::vector<std::vector<double>> grads;
  for (auto& p : params) grads.emplace_back(p.tensor->grad().begin(), p.tensor->grad().end());

  double worst = check_coords(x, gx.data(), f, rng);
  for (std::size_t i = 0; i < params.size(); ++i) {
    worst = std::max(worst, check_coords(*params[i].tensor, grads[i], f, rng));
  }
  return worst;
}

/// Full PretrainNet forward + lambda-weighted loss, batch statistics on.
/// Up to max_coords coordinates per tensor are probed.
inline double pretrain_loss_case(std::uint64_t seed, std::size_t max_coords = 12) {
  std::mt19937_64 rng(seed);
  const auto cfg = models::EncoderDecoderConfig::pretrain_net(2, 16);
  models::PretrainNet<double> net(cfg, seed);
  // Larger weights than the default init so every layer matters to the loss.
  // Zero biases would leave convolutions over dead ReLU regions sitting exactly
  // on the kink, where one-sided slopes and the subgradient disagree.
  std::uniform_real_distribution<double> offset(-0.2, 0.2);
  for (auto& p : net.parameters()) {
    if (p.name.ends_with(".weight")) {
      for (auto& v : p.tensor->data()) v *= 10.0;
    } else if (p.name.ends_with(".bias") || p.name.ends_with(".beta")) {
      for (auto& v : p.tensor->data()) v = offset(rng);
    }
  }
  const std::size_t n = 3;
  auto x = random_tensor({n, 1, 16, 16}, rng, 0.0, 1.0);
  const auto target = x;  // held fixed so the input gradient is the network's alone
  std::vector<int> cls{0, 1, 2};
  const auto labels = nn::one_hot<double>(cls, 3);
  const double lambda = 0.5;

  const auto f = [&] {
    auto out = net.forward(x, nn::Mode::Train);
    return static_cast<double>(train::pretrain_loss(out.output, target, *out.logits, labels, lambda).total);
  };
  net.zero_grad();
  auto out = net.forward(x, nn::Mode::Train);
  const auto loss = train::pretrain_loss(out.output, target, *out.logits, labels, lambda);
  const auto gx = net.backward(loss.grad_recon, &loss.grad_logits);

  auto params = net.parameters();
  std::vector<std::vector<double>> grads;
  for (auto& p : params) grads.emplace_back(p.tensor->grad().begin(), p.tensor->grad().end());

  // BatchNorm over three samples at the 1x1 bottleneck is strongly curved;
  // a smaller step keeps the truncation error well below the tolerance.
  constexpr double step = 1e-6;
  double worst = check_coords(x, gx.data(), f, rng, max_coords, step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    worst = std::max(worst, check_coords(*params[i].tensor, grads[i], f, rng, max_coords, step));
  }
  return worst;
}

struct GradientCase {
  const char* name;
  std::function<double(std::uint64_t)> run;
};

inline std::vector<GradientCase> gradient_cases() {
  return {
      {"conv2d", [](std::uint64_t s) { return conv_case(s, false); }},
      {"deconv2d", [](std::uint64_t s) { return conv_case(s, true); }},
      {"batchnorm2d", batchnorm_case},
      {"leaky_relu", leaky_relu_case},
      {"fully_connected", fully_connected_case},
      {"mse_loss", mse_case},
      {"softmax_cross_entropy", softmax_ce_case},
      {"l1_loss", l1_case},
      {"residual_block", residual_block_case},
      {"pretrainnet_loss", [](std::uint64_t s) { return pretrain_loss_case(s); }},
  };
}

}  // namespace mdpet::testing
