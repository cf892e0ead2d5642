// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include "wgfe/kernels.hpp"

#if defined(WGFE_HAVE_AVX2)
#include <immintrin.h>

namespace wgfe::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double squared_distance_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k));
    const __m256d d1 = _mm256_sub_pd(_mm256_loadu_pd(a + k + 4), _mm256_loadu_pd(b + k + 4));
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
    acc1 = _mm256_fmadd_pd(d1, d1, acc1);
  }
  for (; k + 4 <= n; k += 4) {
    const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k));
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; k < n; ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + k + 4), _mm256_loadu_pd(b + k + 4), acc1);
  }
  for (; k + 4 <= n; k += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; k < n; ++k) s += a[k] * b[k];
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    _mm256_storeu_pd(y + k, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + k), _mm256_loadu_pd(y + k)));
  }
  for (; k < n; ++k) y[k] += alpha * x[k];
}

void accumulate_avx2(const double* a, double* acc, std::size_t n) {
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    _mm256_storeu_pd(acc + k, _mm256_add_pd(_mm256_loadu_pd(acc + k), _mm256_loadu_pd(a + k)));
  }
  for (; k < n; ++k) acc[k] += a[k];
}

const KernelTable kAvx2{Backend::Avx2, squared_distance_avx2, dot_avx2, axpy_avx2, accumulate_avx2};

}  // namespace

const KernelTable* avx2_table() { return &kAvx2; }

}  // namespace wgfe::kernels

#else

namespace wgfe::kernels {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace wgfe::kernels

#endif
