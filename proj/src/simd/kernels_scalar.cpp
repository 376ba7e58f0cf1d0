#include <cmath>

#include "mdpet/simd/kernels.hpp"

namespace mdpet::simd::detail {
namespace {

template <typename T>
void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_row,
                 std::size_t a_col, const T* b, std::size_t ldb, T* c, std::size_t ldc,
                 bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = T{0};
    }
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * a_row + p * a_col];
      const T* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename T>
void adam_scalar(std::size_t count, T* param, const T* grad, T* m, T* v,
                 const AdamCoeffs<T>& cf) {
  const T one{1};
  for (std::size_t i = 0; i < count; ++i) {
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
const KernelTable<T>& scalar_table() {
  static const KernelTable<T> table{&gemm_scalar<T>, &adam_scalar<T>};
  return table;
}

template const KernelTable<float>& scalar_table<float>();
template const KernelTable<double>& scalar_table<double>();

}  // namespace mdpet::simd::detail
