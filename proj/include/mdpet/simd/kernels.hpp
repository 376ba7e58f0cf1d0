#pragma once
// Inner-loop arithmetic for the network code. Every kernel has a portable
// scalar reference; vectorized variants are chosen once at startup from the
// CPU's capabilities and can be overridden for equivalence testing.

#include <cstddef>
#include <span>
#include <string_view>

namespace mdpet::simd {

enum class Backend { Scalar, Avx2 };

enum class Trans { No, Yes };

std::string_view backend_name(Backend backend);

/// True when the backend was compiled in and the running CPU supports it.
bool backend_available(Backend backend);

/// Best available backend, unless MDPET_SIMD=scalar|avx2 says otherwise.
Backend detect_backend();

Backend active_backend();

/// Throws ValidationError when the backend is unavailable on this machine.
void set_backend(Backend backend);

/// Restores the previous backend on destruction.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend backend) : previous_(active_backend()) { set_backend(backend); }
  ~ScopedBackend() { set_backend(previous_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

/// C[m x n] = (accumulate ? C : 0) + op(A)[m x k] * op(B)[k x n], row-major.
/// lda/ldb/ldc are the row strides of the stored (untransposed) arrays.
/// Each output element is reduced over k in ascending order.
template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

template <typename T>
struct AdamCoeffs {
  T lr;
  T beta1;
  T beta2;
  T epsilon;
  T bias_correction1;  // 1 - beta1^t
  T bias_correction2;  // 1 - beta2^t
};

/// One bias-corrected Adam update over a contiguous parameter slot.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 const AdamCoeffs<T>& coeffs);

namespace detail {

// A(i, p) = a[i * a_row + p * a_col]; B is row-major with stride ldb.
template <typename T>
using GemmFn = void (*)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_row,
                        std::size_t a_col, const T* b, std::size_t ldb, T* c, std::size_t ldc,
                        bool accumulate);

template <typename T>
using AdamFn = void (*)(std::size_t count, T* param, const T* grad, T* m, T* v,
                        const AdamCoeffs<T>& coeffs);

template <typename T>
struct KernelTable {
  GemmFn<T> gemm_strided_a;
  AdamFn<T> adam;
};

template <typename T>
const KernelTable<T>& scalar_table();

#if defined(MDPET_HAVE_AVX2)
template <typename T>
const KernelTable<T>& avx2_table();
#endif

}  // namespace detail

}  // namespace mdpet::simd
