#pragma once

// Data-parallel inner loops used by the estimators. Each kernel has a scalar
// reference implementation and SIMD variants (AVX2+FMA on x86-64, NEON on
// aarch64). The active table is picked once at startup from CPU features and
// can be overridden with set_backend() or the WGFE_SIMD environment variable
// ("scalar", "avx2", "neon").

#include <cstddef>
#include <string_view>

namespace wgfe::kernels {

enum class Backend { Scalar, Avx2, Neon };

struct KernelTable {
  Backend backend;
  // sum_k (a_k - b_k)^2
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  // sum_k a_k * b_k
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y_k += alpha * x_k
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // acc_k += a_k
  void (*accumulate)(const double* a, double* acc, std::size_t n);
};

const KernelTable& scalar_table();
/// nullptr when the variant was not compiled in.
const KernelTable* avx2_table();
const KernelTable* neon_table();

bool backend_available(Backend b);
/// Throws std::invalid_argument if the backend is not available on this CPU.
void set_backend(Backend b);
Backend active_backend();
const KernelTable& active();

std::string_view backend_name(Backend b);

inline double squared_distance(const double* a, const double* b, std::size_t n) {
  return active().squared_distance(a, b, n);
}
inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active().axpy(alpha, x, y, n);
}
inline void accumulate(const double* a, double* acc, std::size_t n) { active().accumulate(a, acc, n); }

}  // namespace wgfe::kernels
