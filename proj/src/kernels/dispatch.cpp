#include <cstdlib>
#include <string>

#include "alab/kernels.hpp"

namespace alab::kernels {

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "unknown";
}

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::Neon:
#if defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!isa_available(isa)) return scalar::table();
  switch (isa) {
#if defined(__x86_64__) || defined(_M_X64)
    case Isa::Avx2: return avx2::table();
#endif
#if defined(__aarch64__)
    case Isa::Neon: return neon::table();
#endif
    default: return scalar::table();
  }
}

namespace {

Isa detect() {
  if (const char* env = std::getenv("LAB_ISA")) {
    const std::string want(env);
    if (want == "scalar") return Isa::Scalar;
    if (want == "avx2" && isa_available(Isa::Avx2)) return Isa::Avx2;
    if (want == "neon" && isa_available(Isa::Neon)) return Isa::Neon;
  }
  if (isa_available(Isa::Avx2)) return Isa::Avx2;
  if (isa_available(Isa::Neon)) return Isa::Neon;
  return Isa::Scalar;
}

}  // namespace

Isa active_isa() {
  static const Isa isa = detect();
  return isa;
}

const KernelTable& active() {
  static const KernelTable& t = table(active_isa());
  return t;
}

}  // namespace alab::kernels
