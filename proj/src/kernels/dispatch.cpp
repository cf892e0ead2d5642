#include "wgfe/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace wgfe::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* table_for(Backend b) {
  switch (b) {
    case Backend::Scalar:
      return &scalar_table();
    case Backend::Avx2:
      return (avx2_table() != nullptr && cpu_has_avx2()) ? avx2_table() : nullptr;
    case Backend::Neon:
      return neon_table();
  }
  return nullptr;
}

const KernelTable* detect() {
  if (const char* env = std::getenv("WGFE_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return &scalar_table();
    if (want == "avx2" && table_for(Backend::Avx2)) return table_for(Backend::Avx2);
    if (want == "neon" && table_for(Backend::Neon)) return table_for(Backend::Neon);
  }
  if (const auto* t = table_for(Backend::Avx2)) return t;
  if (const auto* t = table_for(Backend::Neon)) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{detect()};
  return table;
}

}  // namespace

bool backend_available(Backend b) { return table_for(b) != nullptr; }

void set_backend(Backend b) {
  const KernelTable* t = table_for(b);
  if (t == nullptr) {
    throw std::invalid_argument("SIMD backend not available: " + std::string(backend_name(b)));
  }
  current().store(t);
}

Backend active_backend() { return current().load()->backend; }

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::Scalar:
      return "scalar";
    case Backend::Avx2:
      return "avx2";
    case Backend::Neon:
      return "neon";
  }
  return "unknown";
}

}  // namespace wgfe::kernels
