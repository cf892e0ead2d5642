#include "wgfe/kernels.hpp"

namespace wgfe::kernels {
namespace {

double squared_distance_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += a[k] * b[k];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) y[k] += alpha * x[k];
}

void accumulate_scalar(const double* a, double* acc, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) acc[k] += a[k];
}

const KernelTable kScalar{Backend::Scalar, squared_distance_scalar, dot_scalar, axpy_scalar,
                          accumulate_scalar};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace wgfe::kernels
