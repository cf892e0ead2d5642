#include "wgfe/kernels.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

using namespace wgfe::kernels;

namespace {

std::vector<const KernelTable*> simd_tables() {
  std::vector<const KernelTable*> out;
  if (backend_available(Backend::Avx2)) out.push_back(avx2_table());
  if (backend_available(Backend::Neon)) out.push_back(neon_table());
  return out;
}

std::vector<double> draw(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 3.0);
  std::vector<double> v(n);
  for (auto& x : v) x = z(rng);
  return v;
}

}  // namespace

TEST_CASE("scalar kernels on hand-checked inputs") {
  const KernelTable& s = scalar_table();
  const double a[] = {1.0, 2.0, 3.0};
  const double b[] = {0.0, 4.0, -1.0};
  CHECK(s.squared_distance(a, b, 3) == 1.0 + 4.0 + 16.0);
  CHECK(s.dot(a, b, 3) == 8.0 - 3.0);
  double y[] = {1.0, 1.0, 1.0};
  s.axpy(2.0, a, y, 3);
  CHECK(y[0] == 3.0);
  CHECK(y[2] == 7.0);
  s.accumulate(b, y, 3);
  CHECK(y[1] == 9.0);
  CHECK(s.dot(a, b, 0) == 0.0);
}

TEST_CASE("SIMD kernels match scalar reference across lengths and offsets") {
  const auto tables = simd_tables();
  if (tables.empty()) {
    MESSAGE("no SIMD backend on this machine; scalar only");
    return;
  }
  std::mt19937_64 rng(7);
  const KernelTable& ref = scalar_table();
  for (const KernelTable* simd : tables) {
    CAPTURE(backend_name(simd->backend));
    for (std::size_t n = 0; n <= 67; ++n) {
      for (std::size_t off = 0; off < 3; ++off) {
        auto a = draw(n + off, rng);
        auto b = draw(n + off, rng);
        const double* pa = a.data() + off;
        const double* pb = b.data() + off;
        // Reassociated sums: compare against the magnitude of the terms.
        double scale = 0.0;
        for (std::size_t k = 0; k < n; ++k) scale += std::abs(pa[k] * pb[k]) + (pa[k] - pb[k]) * (pa[k] - pb[k]);
        const double tol = 1e-14 * (scale + 1.0);
        CHECK(std::abs(simd->squared_distance(pa, pb, n) - ref.squared_distance(pa, pb, n)) <= tol);
        CHECK(std::abs(simd->dot(pa, pb, n) - ref.dot(pa, pb, n)) <= tol);

        std::vector<double> y1(b.begin() + static_cast<long>(off), b.end());
        std::vector<double> y2 = y1;
        ref.axpy(-0.75, pa, y1.data(), n);
        simd->axpy(-0.75, pa, y2.data(), n);
        for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(y1[k] - y2[k]) <= 1e-15 * (std::abs(y1[k]) + 1.0));
        ref.accumulate(pa, y1.data(), n);
        simd->accumulate(pa, y2.data(), n);
        for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(y1[k] - y2[k]) <= 1e-15 * (std::abs(y1[k]) + 1.0));
      }
    }
  }
}

TEST_CASE("backend selection can be forced and restored") {
  const Backend original = active_backend();
  set_backend(Backend::Scalar);
  CHECK(active_backend() == Backend::Scalar);
  CHECK(&active() == &scalar_table());
  if (!backend_available(Backend::Neon)) CHECK_THROWS_AS(set_backend(Backend::Neon), std::invalid_argument);
  set_backend(original);
  CHECK(active_backend() == original);
}
