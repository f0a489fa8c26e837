#pragma once

// Inner-loop arithmetic used by the tensor engine.
//
// Every kernel has a scalar reference implementation. Vector variants (AVX2
// on x86-64, NEON on AArch64) are compiled in separate translation units and
// selected once at startup from what the running CPU reports. Setting the
// environment variable LAB_ISA=scalar pins the scalar table.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace alab::kernels {

enum class Isa { Scalar, Avx2, Neon };

std::string_view isa_name(Isa isa);

/// True if the kernel table for `isa` was compiled in and the CPU supports it.
bool isa_available(Isa isa);

/// The ISA whose table `active()` returns.
Isa active_isa();

struct KernelTable {
  Isa isa;

  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);

  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

  // y[i] += alpha * x[i * stride]
  void (*axpy_gather)(double alpha, const double* x, std::size_t stride, double* y,
                      std::size_t n);

  // y[i * stride] += alpha * x[i]
  void (*axpy_scatter)(double alpha, const double* x, double* y, std::size_t stride,
                       std::size_t n);

  // sum_k values[k] * x[index[k]]
  double (*sparse_dot)(const double* values, const std::uint32_t* index, const double* x,
                       std::size_t nnz);
};

const KernelTable& table(Isa isa);
const KernelTable& active();

namespace scalar {
const KernelTable& table();
}

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
const KernelTable& table();
}
#endif

#if defined(__aarch64__)
namespace neon {
const KernelTable& table();
}
#endif

}  // namespace alab::kernels
