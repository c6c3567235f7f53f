#include "normlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "normlab/error.hpp"
#include "normlab/functional.hpp"
#include "normlab/random.hpp"

namespace normlab::data {

namespace {

constexpr std::size_t kMaxContexts = std::size_t{1} << 20;

std::size_t contexts(std::size_t vocab, std::size_t order) {
  std::size_t n = 1;
  for (std::size_t i = 0; i < order; ++i) {
    if (n > kMaxContexts / vocab) return kMaxContexts + 1;
    n *= vocab;
  }
  return n;
}

}  // namespace

std::string_view generator_name(Generator g) {
  switch (g) {
    case Generator::uniform:
      return "uniform";
    case Generator::markov:
      return "markov";
    case Generator::copy:
      return "copy";
  }
  return "?";
}

Generator parse_generator(std::string_view name) {
  for (Generator g : {Generator::uniform, Generator::markov, Generator::copy}) {
    if (generator_name(g) == name) return g;
  }
  throw ValidationError("corpus.generator: unknown generator '" + std::string(name) +
                        "' (expected uniform, markov or copy)");
}

void CorpusSpec::validate() const {
  if (vocab < 2) throw ValidationError("corpus.vocab: must be at least 2");
  if (length == 0) throw ValidationError("corpus.length: must be positive");
  if (sequences == 0) throw ValidationError("corpus.sequences: must be positive");
  if (generator == Generator::markov) {
    if (order == 0) throw ValidationError("corpus.order: must be positive");
    if (contexts(vocab, order) > kMaxContexts) throw ValidationError("corpus.order: transition table too large");
    if (!(sharpness >= 0.0 && std::isfinite(sharpness))) throw ValidationError("corpus.sharpness: must be >= 0");
  }
  if (generator == Generator::copy && offset >= length) {
    throw ValidationError("corpus.offset: must be smaller than the sequence length");
  }
}

Corpus synthetic_corpus(const CorpusSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::uniform_int_distribution<int> token(0, static_cast<int>(spec.vocab) - 1);
  Corpus c;
  c.vocab = spec.vocab;
  const std::size_t t = spec.length;

  if (spec.generator == Generator::markov) {
    const std::size_t rows = contexts(spec.vocab, spec.order);
    c.transition = softmax_rows(randn({rows, spec.vocab}, rng, spec.sharpness));
  }

  for (std::size_t s = 0; s < spec.sequences; ++s) {
    std::vector<int> seq;
    switch (spec.generator) {
      case Generator::uniform:
        for (std::size_t i = 0; i <= t; ++i) seq.push_back(token(rng));
        break;
      case Generator::markov: {
        for (std::size_t i = 0; i < spec.order; ++i) seq.push_back(token(rng));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        while (seq.size() < t + 1) {
          std::size_t ctx = 0;
          for (std::size_t i = seq.size() - spec.order; i < seq.size(); ++i) {
            ctx = ctx * spec.vocab + static_cast<std::size_t>(seq[i]);
          }
          const double r = u(rng);
          double acc = 0.0;
          int next = static_cast<int>(spec.vocab) - 1;
          for (std::size_t j = 0; j < spec.vocab; ++j) {
            acc += c.transition.at(ctx, j);
            if (r < acc) {
              next = static_cast<int>(j);
              break;
            }
          }
          seq.push_back(next);
        }
        break;
      }
      case Generator::copy: {
        std::vector<int> in(t), out(t);
        for (auto& v : in) v = token(rng);
        for (std::size_t i = 0; i < t; ++i) out[i] = in[i >= spec.offset ? i - spec.offset : 0];
        c.inputs.push_back(std::move(in));
        c.targets.push_back(std::move(out));
        continue;
      }
    }
    c.inputs.emplace_back(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(t));
    c.targets.emplace_back(seq.begin() + 1, seq.end());
  }
  return c;
}

}  // namespace normlab::data
