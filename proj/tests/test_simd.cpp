#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mdpet/error.hpp"
#include "mdpet/simd/kernels.hpp"

using namespace mdpet;
using simd::Backend;
using simd::Trans;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<T> u(-1, 1);
  std::vector<T> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Plain triple loop on op(A) and op(B), accumulated in long double.
template <typename T>
std::vector<T> naive_gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                          const std::vector<T>& a, std::size_t lda, const std::vector<T>& b,
                          std::size_t ldb, const std::vector<T>& c0, std::size_t ldc, bool acc) {
  std::vector<T> c = c0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      long double s = acc ? c[i * ldc + j] : 0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = ta == Trans::No ? a[i * lda + p] : a[p * lda + i];
        const T bv = tb == Trans::No ? b[p * ldb + j] : b[j * ldb + p];
        s += static_cast<long double>(av) * bv;
      }
      c[i * ldc + j] = static_cast<T>(s);
    }
  }
  return c;
}

template <typename T>
void check_shapes(double tol) {
  std::mt19937_64 rng(11);
  const std::size_t dims[] = {1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 33};
  for (const auto m : dims) {
    for (const auto n : {1ul, 3ul, 8ul, 15ul, 16ul, 17ul, 40ul}) {
      for (const auto k : {1ul, 2ul, 9ul, 16ul, 37ul}) {
        for (const auto ta : {Trans::No, Trans::Yes}) {
          for (const auto tb : {Trans::No, Trans::Yes}) {
            const bool acc = (m + n + k) % 2 == 0;
            const std::size_t lda = (ta == Trans::No ? k : m) + 1;
            const std::size_t ldb = (tb == Trans::No ? n : k) + 2;
            const std::size_t ldc = n + 3;
            const auto a = random_vec<T>((ta == Trans::No ? m : k) * lda, rng);
            const auto b = random_vec<T>((tb == Trans::No ? k : n) * ldb, rng);
            const auto c0 = random_vec<T>(m * ldc, rng);
            const auto want = naive_gemm(ta, tb, m, n, k, a, lda, b, ldb, c0, ldc, acc);
            for (const auto backend : {Backend::Scalar, Backend::Avx2}) {
              if (!simd::backend_available(backend)) continue;
              simd::ScopedBackend scope(backend);
              auto c = c0;
              simd::gemm<T>(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, c.data(), ldc, acc);
              for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                  INFO("m=" << m << " n=" << n << " k=" << k << " backend=" << simd::backend_name(backend));
                  REQUIRE(std::abs(c[i * ldc + j] - want[i * ldc + j]) <= tol * (1.0 + k));
                }
                // Padding columns past n are left alone.
                for (std::size_t j = n; j < ldc; ++j) REQUIRE(c[i * ldc + j] == c0[i * ldc + j]);
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

TEST_CASE("gemm matches a naive product on every backend, float") { check_shapes<float>(2e-6); }

TEST_CASE("gemm matches a naive product on every backend, double") { check_shapes<double>(1e-14); }

TEST_CASE("avx2 and scalar gemm agree to rounding on conv-sized problems") {
  if (!simd::backend_available(Backend::Avx2)) return;
  std::mt19937_64 rng(5);
  const std::size_t m = 32, n = 2048, k = 144;
  const auto a = random_vec<float>(m * k, rng);
  const auto b = random_vec<float>(k * n, rng);
  std::vector<float> c_scalar(m * n), c_avx(m * n);
  {
    simd::ScopedBackend s(Backend::Scalar);
    simd::gemm<float>(Trans::No, Trans::No, m, n, k, a.data(), k, b.data(), n, c_scalar.data(), n, false);
  }
  {
    simd::ScopedBackend s(Backend::Avx2);
    simd::gemm<float>(Trans::No, Trans::No, m, n, k, a.data(), k, b.data(), n, c_avx.data(), n, false);
  }
  double worst = 0;
  for (std::size_t i = 0; i < c_avx.size(); ++i) worst = std::max<double>(worst, std::abs(c_avx[i] - c_scalar[i]));
  CHECK(worst < 1e-4);
}

TEST_CASE("gemm is deterministic for repeated calls") {
  std::mt19937_64 rng(3);
  const auto a = random_vec<float>(9 * 20, rng);
  const auto b = random_vec<float>(20 * 13, rng);
  std::vector<float> c1(9 * 13), c2(9 * 13);
  simd::gemm<float>(Trans::No, Trans::No, 9, 13, 20, a.data(), 20, b.data(), 13, c1.data(), 13, false);
  simd::gemm<float>(Trans::No, Trans::No, 9, 13, 20, a.data(), 20, b.data(), 13, c2.data(), 13, false);
  CHECK(c1 == c2);
}

TEST_CASE("adam kernels agree across backends") {
  std::mt19937_64 rng(8);
  for (const std::size_t len : {1ul, 7ul, 8ul, 9ul, 31ul, 100ul}) {
    const auto p0 = random_vec<float>(len, rng);
    const auto g = random_vec<float>(len, rng);
    auto m0 = random_vec<float>(len, rng);
    auto v0 = random_vec<float>(len, rng);
    for (auto& x : v0) x = std::abs(x);
    simd::AdamCoeffs<float> co{1e-3f, 0.9f, 0.999f, 1e-8f, 1.0f - 0.9f * 0.9f, 1.0f - 0.999f * 0.999f};
    std::vector<std::vector<float>> results;
    for (const auto backend : {Backend::Scalar, Backend::Avx2}) {
      if (!simd::backend_available(backend)) continue;
      simd::ScopedBackend scope(backend);
      auto p = p0, m = m0, v = v0;
      simd::adam_update<float>(p, g, m, v, co);
      results.push_back(p);
      for (const auto x : v) CHECK(x >= 0.0f);
    }
    for (std::size_t r = 1; r < results.size(); ++r) {
      for (std::size_t i = 0; i < len; ++i) CHECK(results[r][i] == doctest::Approx(results[0][i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("adam_update rejects mismatched lengths") {
  std::vector<float> p(3), g(2), m(3), v(3);
  CHECK_THROWS_AS(simd::adam_update<float>(p, g, m, v, {}), ShapeError);
}

TEST_CASE("backend selection") {
  CHECK(simd::backend_available(Backend::Scalar));
  CHECK(simd::backend_name(Backend::Avx2) == "avx2");
  const auto before = simd::active_backend();
  {
    simd::ScopedBackend s(Backend::Scalar);
    CHECK(simd::active_backend() == Backend::Scalar);
  }
  CHECK(simd::active_backend() == before);
}
