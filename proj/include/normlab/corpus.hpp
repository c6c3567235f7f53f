#pragma once

// Deterministic synthetic token corpora for language-model experiments.

#include <cstdint>
#include <string_view>
#include <vector>

#include "normlab/tensor.hpp"

namespace normlab::data {

enum class Generator {
  /// i.i.d. uniform tokens, next-token targets.
  uniform,
  /// Order-k Markov chain with a random transition table, next-token targets.
  markov,
  /// Uniform input tokens; the target at i is the input at max(i - offset, 0).
  copy,
};

std::string_view generator_name(Generator g);
/// ValidationError for an unknown name.
Generator parse_generator(std::string_view name);

struct CorpusSpec {
  Generator generator = Generator::copy;
  std::size_t vocab = 8;
  std::size_t length = 8;
  std::size_t sequences = 16;
  /// Markov order k.
  std::size_t order = 1;
  /// Copy-task offset d.
  std::size_t offset = 1;
  /// Markov transition logits are N(0, sharpness^2) before the softmax.
  double sharpness = 2.0;
  std::uint64_t seed = 0;

  /// ValidationError for vocab < 2, zero length or sequences, order 0 or a
  /// transition table with more than 2^20 contexts, offset >= length.
  void validate() const;
};

struct Corpus {
  std::size_t vocab = 0;
  std::vector<std::vector<int>> inputs;
  std::vector<std::vector<int>> targets;
  /// Markov only: [vocab^order, vocab] row-stochastic table; row index is the
  /// context read as a base-vocab number, oldest token most significant.
  Tensor transition;
};

Corpus synthetic_corpus(const CorpusSpec& spec);

}  // namespace normlab::data
