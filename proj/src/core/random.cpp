#include "normlab/random.hpp"

namespace normlab {

std::uint64_t split_seed(std::uint64_t root, std::uint64_t index) {
  std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Tensor randn(Shape shape, Rng& rng, double sd) {
  std::normal_distribution<double> dist(0.0, sd);
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace normlab
