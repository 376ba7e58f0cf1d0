#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <vector>

#include "mdpet/error.hpp"
#include "mdpet/simd/kernels.hpp"

namespace mdpet::simd {
namespace {

bool cpu_has_avx2() {
#if defined(MDPET_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const bool supported = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  return supported;
#else
  return false;
#endif
}

std::atomic<Backend>& backend_slot() {
  static std::atomic<Backend> slot{detect_backend()};
  return slot;
}

template <typename T>
const detail::KernelTable<T>& table() {
#if defined(MDPET_HAVE_AVX2)
  if (active_backend() == Backend::Avx2) return detail::avx2_table<T>();
#endif
  return detail::scalar_table<T>();
}

}  // namespace

std::string_view backend_name(Backend backend) {
  switch (backend) {
    case Backend::Scalar:
      return "scalar";
    case Backend::Avx2:
      return "avx2";
  }
  return "unknown";
}

bool backend_available(Backend backend) {
  return backend == Backend::Scalar || (backend == Backend::Avx2 && cpu_has_avx2());
}

Backend detect_backend() {
  if (const char* env = std::getenv("MDPET_SIMD")) {
    const std::string choice(env);
    if (choice == "scalar") return Backend::Scalar;
    if (choice == "avx2" && cpu_has_avx2()) return Backend::Avx2;
  }
  return cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar;
}

Backend active_backend() { return backend_slot().load(std::memory_order_relaxed); }

void set_backend(Backend backend) {
  if (!backend_available(backend)) {
    throw ValidationError("SIMD backend '" + std::string(backend_name(backend)) +
                          "' is not available on this CPU");
  }
  backend_slot().store(backend, std::memory_order_relaxed);
}

template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  if (m == 0 || n == 0) return;
  const std::size_t a_row = trans_a == Trans::No ? lda : 1;
  const std::size_t a_col = trans_a == Trans::No ? 1 : lda;
  if (trans_b == Trans::No) {
    table<T>().gemm_strided_a(m, n, k, a, a_row, a_col, b, ldb, c, ldc, accumulate);
    return;
  }
  // B is stored n x k; the kernels want k x n rows.
  thread_local std::vector<T> scratch;
  if (scratch.size() < k * n) scratch.resize(k * n);
  constexpr std::size_t kBlock = 32;
  for (std::size_t j0 = 0; j0 < n; j0 += kBlock) {
    const std::size_t j1 = std::min(n, j0 + kBlock);
    for (std::size_t p0 = 0; p0 < k; p0 += kBlock) {
      const std::size_t p1 = std::min(k, p0 + kBlock);
      for (std::size_t j = j0; j < j1; ++j) {
        for (std::size_t p = p0; p < p1; ++p) scratch[p * n + j] = b[j * ldb + p];
      }
    }
  }
  table<T>().gemm_strided_a(m, n, k, a, a_row, a_col, scratch.data(), n, c, ldc, accumulate);
}

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 const AdamCoeffs<T>& coeffs) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw ShapeError("adam_update: parameter, gradient and moment lengths differ");
  }
  table<T>().adam(param.size(), param.data(), grad.data(), m.data(), v.data(), coeffs);
}

template void gemm<float>(Trans, Trans, std::size_t, std::size_t, std::size_t, const float*,
                          std::size_t, const float*, std::size_t, float*, std::size_t, bool);
template void gemm<double>(Trans, Trans, std::size_t, std::size_t, std::size_t, const double*,
                           std::size_t, const double*, std::size_t, double*, std::size_t, bool);
template void adam_update<float>(std::span<float>, std::span<const float>, std::span<float>,
                                 std::span<float>, const AdamCoeffs<float>&);
template void adam_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                  std::span<double>, const AdamCoeffs<double>&);

}  // namespace mdpet::simd
