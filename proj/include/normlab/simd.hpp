#pragma once

// Dense double-precision inner loops with a scalar reference implementation
// and an AVX2+FMA variant chosen at runtime.
//
// Elementwise kernels (add, sub, mul, scale) are bit-identical across
// variants. Reductions and matmul reassociate and fuse, so they agree with
// the scalar reference to rounding only. A process always uses one variant,
// which keeps repeated runs bit-identical.

#include <cstddef>
#include <string_view>

namespace normlab::simd {

struct KernelTable {
  std::string_view name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  double (*sum_squares)(const double* a, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*sub)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  void (*scale)(const double* a, double s, double* out, std::size_t n);
  /// out[m x n] = a[m x k] * b[k x n], all row-major; out is overwritten.
  void (*matmul)(const double* a, const double* b, double* out, std::size_t m,
                 std::size_t k, std::size_t n);
};

const KernelTable& scalar_kernels();

/// nullptr when the binary was built without AVX2 support.
const KernelTable* avx2_kernels();

bool cpu_has_avx2();

/// Table used by the library. Chosen once: AVX2 when the CPU supports it,
/// unless NORMLAB_SIMD=scalar is set in the environment.
const KernelTable& active();

}  // namespace normlab::simd
