#pragma once
// Slow reference formulas the optimized code is compared against.

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace mdpet::testing {

/// SSIM by explicit 11x11 Gaussian-weighted sums at every valid window.
inline double ssim_direct(std::span<const float> a, std::span<const float> b, std::size_t h, std::size_t w) {
  constexpr int r = 5;
  double win[11][11], norm = 0;
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j) norm += win[i + r][j + r] = std::exp(-(i * i + j * j) / (2 * 1.5 * 1.5));
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  std::size_t count = 0;
  for (std::size_t y = r; y + r < h; ++y) {
    for (std::size_t x = r; x + r < w; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = -r; i <= r; ++i) {
        for (int j = -r; j <= r; ++j) {
          const double g = win[i + r][j + r] / norm;
          const double va = a[(y + i) * w + x + j], vb = b[(y + i) * w + x + j];
          ma += g * va;
          mb += g * vb;
          saa += g * va * va;
          sbb += g * vb * vb;
          sab += g * va * vb;
        }
      }
      const double vara = saa - ma * ma, varb = sbb - mb * mb, cov = sab - ma * mb;
      total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (vara + varb + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

/// 1 - integral of the Student-t density over [-|t|, |t|], composite Simpson.
inline double t_two_sided_by_quadrature(double t, double dof) {
  const double c = std::exp(std::lgamma((dof + 1) / 2) - std::lgamma(dof / 2)) / std::sqrt(dof * std::numbers::pi);
  const auto pdf = [&](double x) { return c * std::pow(1 + x * x / dof, -(dof + 1) / 2); };
  const int n = 200000;
  const double hi = std::abs(t), step = hi / n;
  double s = pdf(0) + pdf(hi);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * pdf(i * step);
  return 1 - 2 * s * step / 3;
}

}  // namespace mdpet::testing
