// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include <immintrin.h>

#include "alab/kernels.hpp"

namespace alab::kernels::avx2 {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy_gather(double alpha, const double* x, std::size_t stride, double* y,
                 std::size_t n) {
  if (stride == 1) {
    axpy(alpha, x, y, n);
    return;
  }
  const __m256d va = _mm256_set1_pd(alpha);
  const auto s = static_cast<long long>(stride);
  const __m256i offsets = _mm256_set_epi64x(3 * s, 2 * s, s, 0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vx = _mm256_i64gather_pd(x + i * stride, offsets, 8);
    __m256d vy = _mm256_loadu_pd(y + i);
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, vx, vy));
  }
  for (; i < n; ++i) y[i] += alpha * x[i * stride];
}

void axpy_scatter(double alpha, const double* x, double* y, std::size_t stride,
                  std::size_t n) {
  if (stride == 1) {
    axpy(alpha, x, y, n);
    return;
  }
  // AVX2 has no scatter; the multiply is still vectorised.
  const __m256d va = _mm256_set1_pd(alpha);
  alignas(32) double tmp[4];
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_store_pd(tmp, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    y[(i + 0) * stride] += tmp[0];
    y[(i + 1) * stride] += tmp[1];
    y[(i + 2) * stride] += tmp[2];
    y[(i + 3) * stride] += tmp[3];
  }
  for (; i < n; ++i) y[i * stride] += alpha * x[i];
}

double sparse_dot(const double* values, const std::uint32_t* index, const double* x,
                  std::size_t nnz) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 4 <= nnz; k += 4) {
    __m128i idx = _mm_loadu_si128(reinterpret_cast<const __m128i*>(index + k));
    __m256d vx = _mm256_i32gather_pd(x, idx, 8);
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(values + k), vx, acc);
  }
  double out = hsum(acc);
  for (; k < nnz; ++k) out += values[k] * x[index[k]];
  return out;
}

}  // namespace

const KernelTable& table() {
  static const KernelTable t{Isa::Avx2, dot, axpy, axpy_gather, axpy_scatter, sparse_dot};
  return t;
}

}  // namespace alab::kernels::avx2
