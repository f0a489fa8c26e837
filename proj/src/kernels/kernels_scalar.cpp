#include "alab/kernels.hpp"

namespace alab::kernels::scalar {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void axpy_gather(double alpha, const double* x, std::size_t stride, double* y,
                 std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i * stride];
}

void axpy_scatter(double alpha, const double* x, double* y, std::size_t stride,
                  std::size_t n) {
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
  static const KernelTable t{Isa::Scalar, dot, axpy, axpy_gather, axpy_scatter, sparse_dot};
  return t;
}

}  // namespace alab::kernels::scalar
