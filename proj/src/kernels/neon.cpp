#include "wgfe/kernels.hpp"

#if defined(__aarch64__) && defined(__ARM_NEON)
#include <arm_neon.h>

namespace wgfe::kernels {
namespace {

double squared_distance_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const float64x2_t d0 = vsubq_f64(vld1q_f64(a + k), vld1q_f64(b + k));
    const float64x2_t d1 = vsubq_f64(vld1q_f64(a + k + 2), vld1q_f64(b + k + 2));
    acc0 = vfmaq_f64(acc0, d0, d0);
    acc1 = vfmaq_f64(acc1, d1, d1);
  }
  double s = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; k < n; ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

double dot_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + k), vld1q_f64(b + k));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + k + 2), vld1q_f64(b + k + 2));
  }
  double s = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; k < n; ++k) s += a[k] * b[k];
  return s;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t k = 0;
  for (; k + 2 <= n; k += 2) vst1q_f64(y + k, vfmaq_f64(vld1q_f64(y + k), va, vld1q_f64(x + k)));
  for (; k < n; ++k) y[k] += alpha * x[k];
}

void accumulate_neon(const double* a, double* acc, std::size_t n) {
  std::size_t k = 0;
  for (; k + 2 <= n; k += 2) vst1q_f64(acc + k, vaddq_f64(vld1q_f64(acc + k), vld1q_f64(a + k)));
  for (; k < n; ++k) acc[k] += a[k];
}

const KernelTable kNeon{Backend::Neon, squared_distance_neon, dot_neon, axpy_neon, accumulate_neon};

}  // namespace

const KernelTable* neon_table() { return &kNeon; }

}  // namespace wgfe::kernels

#else

namespace wgfe::kernels {
const KernelTable* neon_table() { return nullptr; }
}  // namespace wgfe::kernels

#endif
