// Compiled with -mavx2 -mfma; only reached when the CPU reports both.

#include <immintrin.h>

#include <cmath>

#include "mdpet/simd/kernels.hpp"

namespace mdpet::simd::detail {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
  using reg = __m256;
  static constexpr std::size_t width = 8;
  static reg zero() { return _mm256_setzero_ps(); }
  static reg set1(float x) { return _mm256_set1_ps(x); }
  static reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, reg x) { _mm256_storeu_ps(p, x); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
  static reg mul(reg a, reg b) { return _mm256_mul_ps(a, b); }
  static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_ps(a, b); }
  static reg div(reg a, reg b) { return _mm256_div_ps(a, b); }
  static reg sqrt(reg a) { return _mm256_sqrt_ps(a); }
};

template <>
struct Vec<double> {
  using reg = __m256d;
  static constexpr std::size_t width = 4;
  static reg zero() { return _mm256_setzero_pd(); }
  static reg set1(double x) { return _mm256_set1_pd(x); }
  static reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, reg x) { _mm256_storeu_pd(p, x); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
  static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
  static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_pd(a, b); }
  static reg div(reg a, reg b) { return _mm256_div_pd(a, b); }
  static reg sqrt(reg a) { return _mm256_sqrt_pd(a); }
};

// ROWS x (COLS * width) register tile, reduced over p in ascending order.
template <typename T, std::size_t ROWS, std::size_t COLS>
inline void tile(std::size_t k, const T* a, std::size_t a_row, std::size_t a_col, const T* b,
                 std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  using V = Vec<T>;
  typename V::reg acc[ROWS][COLS];
  for (std::size_t r = 0; r < ROWS; ++r) {
    for (std::size_t q = 0; q < COLS; ++q) {
      acc[r][q] = accumulate ? V::load(c + r * ldc + q * V::width) : V::zero();
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * ldb;
    typename V::reg bv[COLS];
    for (std::size_t q = 0; q < COLS; ++q) bv[q] = V::load(brow + q * V::width);
    for (std::size_t r = 0; r < ROWS; ++r) {
      const auto av = V::set1(a[r * a_row + p * a_col]);
      for (std::size_t q = 0; q < COLS; ++q) acc[r][q] = V::fmadd(av, bv[q], acc[r][q]);
    }
  }
  for (std::size_t r = 0; r < ROWS; ++r) {
    for (std::size_t q = 0; q < COLS; ++q) V::store(c + r * ldc + q * V::width, acc[r][q]);
  }
}

template <typename T, std::size_t ROWS>
inline void row_block(std::size_t n, std::size_t k, const T* a, std::size_t a_row,
                      std::size_t a_col, const T* b, std::size_t ldb, T* c, std::size_t ldc,
                      bool accumulate) {
  constexpr std::size_t w = Vec<T>::width;
  std::size_t j = 0;
  for (; j + 2 * w <= n; j += 2 * w) {
    tile<T, ROWS, 2>(k, a, a_row, a_col, b + j, ldb, c + j, ldc, accumulate);
  }
  for (; j + w <= n; j += w) {
    tile<T, ROWS, 1>(k, a, a_row, a_col, b + j, ldb, c + j, ldc, accumulate);
  }
  // Column tail.
  for (std::size_t r = 0; r < ROWS; ++r) {
    for (std::size_t jj = j; jj < n; ++jj) {
      T acc = accumulate ? c[r * ldc + jj] : T{0};
      for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[r * a_row + p * a_col], b[p * ldb + jj], acc);
      c[r * ldc + jj] = acc;
    }
  }
}

template <typename T>
void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_row,
               std::size_t a_col, const T* b, std::size_t ldb, T* c, std::size_t ldc,
               bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    row_block<T, 4>(n, k, a + i * a_row, a_row, a_col, b, ldb, c + i * ldc, ldc, accumulate);
  }
  for (; i < m; ++i) {
    row_block<T, 1>(n, k, a + i * a_row, a_row, a_col, b, ldb, c + i * ldc, ldc, accumulate);
  }
}

template <typename T>
void adam_avx2(std::size_t count, T* param, const T* grad, T* m, T* v, const AdamCoeffs<T>& cf) {
  using V = Vec<T>;
  const T one{1};
  const auto b1 = V::set1(cf.beta1);
  const auto b2 = V::set1(cf.beta2);
  const auto omb1 = V::set1(one - cf.beta1);
  const auto omb2 = V::set1(one - cf.beta2);
  const auto bc1 = V::set1(cf.bias_correction1);
  const auto bc2 = V::set1(cf.bias_correction2);
  const auto lr = V::set1(cf.lr);
  const auto eps = V::set1(cf.epsilon);
  std::size_t i = 0;
  for (; i + V::width <= count; i += V::width) {
    const auto g = V::load(grad + i);
    const auto mi = V::add(V::mul(b1, V::load(m + i)), V::mul(omb1, g));
    const auto vi = V::add(V::mul(b2, V::load(v + i)), V::mul(V::mul(omb2, g), g));
    V::store(m + i, mi);
    V::store(v + i, vi);
    const auto m_hat = V::div(mi, bc1);
    const auto v_hat = V::div(vi, bc2);
    const auto step = V::div(V::mul(lr, m_hat), V::add(V::sqrt(v_hat), eps));
    V::store(param + i, V::sub(V::load(param + i), step));
  }
  for (; i < count; ++i) {
    const T g = grad[i];
    m[i] = cf.beta1 * m[i] + (one - cf.beta1) * g;
    v[i] = cf.beta2 * v[i] + (one - cf.beta2) * g * g;
    const T m_hat = m[i] / cf.bias_correction1;
    const T v_hat = v[i] / cf.bias_correction2;
    param[i] -= cf.lr * m_hat / (std::sqrt(v_hat) + cf.epsilon);
  }
}

}  // namespace

template <typename T>
const KernelTable<T>& avx2_table() {
  static const KernelTable<T> table{&gemm_avx2<T>, &adam_avx2<T>};
  return table;
}

template const KernelTable<float>& avx2_table<float>();
template const KernelTable<double>& avx2_table<double>();

}  // namespace mdpet::simd::detail
