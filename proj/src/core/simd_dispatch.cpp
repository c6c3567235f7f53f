#include <cstdlib>
#include <string_view>

#include "normlab/simd.hpp"

namespace normlab::simd {

#if !defined(NORMLAB_HAVE_AVX2)
const KernelTable* avx2_kernels() { return nullptr; }
#endif

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& active() {
  static const KernelTable& table = []() -> const KernelTable& {
    const char* forced = std::getenv("NORMLAB_SIMD");
    if (forced != nullptr && std::string_view(forced) == "scalar") return scalar_kernels();
    if (const KernelTable* wide = avx2_kernels(); wide != nullptr && cpu_has_avx2()) {
      return *wide;
    }
    return scalar_kernels();
  }();
  return table;
}

}  // namespace normlab::simd
