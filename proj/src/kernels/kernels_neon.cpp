#include <arm_neon.h>

#include "alab/kernels.hpp"

namespace alab::kernels::neon {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy_gather(double alpha, const double* x, std::size_t stride, double* y,
                 std::size_t n) {
  if (stride == 1) {
    axpy(alpha, x, y, n);
    return;
  }
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i * stride];
}

void axpy_scatter(double alpha, const double* x, double* y, std::size_t stride,
                  std::size_t n) {
  if (stride == 1) {
    axpy(alpha, x, y, n);
    return;
  }
  for (std::size_t i = 0; i < n; ++i) y[i * stride] += alpha * x[i];
}

double sparse_dot(const double* values, const std::uint32_t* index, const double* x,
                  std::size_t nnz) {
  double acc = 0.0;
  for (std::size_t k = 0; k < nnz; ++k) acc += values[k] * x[index[k]];
  return acc;
}

}  // namespace

const KernelTable& table() {
  static const KernelTable t{Isa::Neon, dot, axpy, axpy_gather, axpy_scatter, sparse_dot};
  return t;
}

}  // namespace alab::kernels::neon
