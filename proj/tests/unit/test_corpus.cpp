#include <gtest/gtest.h>

#include <cmath>

#include "normlab/corpus.hpp"
#include "normlab/error.hpp"
#include "normlab/experiments.hpp"

using namespace normlab;
using namespace normlab::data;

TEST(Corpus, DeterministicForAFixedSeed) {
  for (Generator g : {Generator::uniform, Generator::markov, Generator::copy}) {
    CorpusSpec s;
    s.generator = g;
    s.seed = 17;
    const Corpus a = synthetic_corpus(s), b = synthetic_corpus(s);
    EXPECT_EQ(a.inputs, b.inputs) << generator_name(g);
    EXPECT_EQ(a.targets, b.targets) << generator_name(g);
    EXPECT_EQ(a.transition, b.transition) << generator_name(g);
    s.seed = 18;
    EXPECT_NE(synthetic_corpus(s).inputs, a.inputs) << generator_name(g);
  }
}

TEST(Corpus, ShapesAndRanges) {
  CorpusSpec s;
  s.vocab = 5;
  s.length = 7;
  s.sequences = 9;
  for (Generator g : {Generator::uniform, Generator::markov, Generator::copy}) {
    s.generator = g;
    const Corpus c = synthetic_corpus(s);
    ASSERT_EQ(c.inputs.size(), 9u);
    ASSERT_EQ(c.targets.size(), 9u);
    for (std::size_t i = 0; i < 9; ++i) {
      ASSERT_EQ(c.inputs[i].size(), 7u);
      ASSERT_EQ(c.targets[i].size(), 7u);
      for (int t : c.inputs[i]) EXPECT_TRUE(t >= 0 && t < 5);
      for (int t : c.targets[i]) EXPECT_TRUE(t >= 0 && t < 5);
    }
  }
}

TEST(Corpus, NextTokenTargets) {
  CorpusSpec s;
  s.generator = Generator::uniform;
  const Corpus c = synthetic_corpus(s);
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    for (std::size_t t = 0; t + 1 < s.length; ++t) EXPECT_EQ(c.targets[i][t], c.inputs[i][t + 1]);
  }
}

TEST(Corpus, CopyTargetsLookBack) {
  CorpusSpec s;
  s.generator = Generator::copy;
  s.offset = 3;
  s.length = 10;
  const Corpus c = synthetic_corpus(s);
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    for (std::size_t t = 0; t < s.length; ++t) {
      EXPECT_EQ(c.targets[i][t], c.inputs[i][t >= 3 ? t - 3 : 0]);
    }
  }
}

TEST(Corpus, MarkovBigramsMatchTransitionTable) {
  CorpusSpec s;
  s.generator = Generator::markov;
  s.vocab = 4;
  s.order = 1;
  s.length = 200;
  s.sequences = 100;
  s.seed = 5;
  const Corpus c = synthetic_corpus(s);
  ASSERT_EQ(c.transition.shape(), (Shape{4, 4}));
  for (std::size_t r = 0; r < 4; ++r) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 4; ++j) sum += c.transition.at(r, j);
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  std::vector<std::vector<double>> counts(4, std::vector<double>(4, 0.0));
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    for (std::size_t t = 0; t < s.length; ++t) counts[c.inputs[i][t]][c.targets[i][t]] += 1.0;
  }
  for (std::size_t r = 0; r < 4; ++r) {
    double n = 0.0;
    for (double v : counts[r]) n += v;
    ASSERT_GT(n, 500.0);
    for (std::size_t j = 0; j < 4; ++j) {
      const double p = c.transition.at(r, j);
      // Five binomial standard errors.
      EXPECT_NEAR(counts[r][j] / n, p, 5.0 * std::sqrt(p * (1 - p) / n) + 1e-9) << r << "->" << j;
    }
  }
}

TEST(Corpus, SecondOrderContextIndexing) {
  CorpusSpec s;
  s.generator = Generator::markov;
  s.vocab = 3;
  s.order = 2;
  s.sharpness = 50.0;  // nearly deterministic transitions
  s.length = 30;
  const Corpus c = synthetic_corpus(s);
  ASSERT_EQ(c.transition.shape(), (Shape{9, 3}));
  std::size_t agree = 0, total = 0;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    for (std::size_t t = 1; t < s.length; ++t) {
      const std::size_t ctx = static_cast<std::size_t>(c.inputs[i][t - 1]) * 3 + static_cast<std::size_t>(c.inputs[i][t]);
      std::size_t best = 0;
      for (std::size_t j = 1; j < 3; ++j) {
        if (c.transition.at(ctx, j) > c.transition.at(ctx, best)) best = j;
      }
      agree += c.targets[i][t] == static_cast<int>(best);
      ++total;
    }
  }
  EXPECT_GT(static_cast<double>(agree) / static_cast<double>(total), 0.95);
}

TEST(Corpus, Validation) {
  CorpusSpec s;
  s.vocab = 1;
  EXPECT_THROW(synthetic_corpus(s), ValidationError);
  s = CorpusSpec{};
  s.length = 0;
  EXPECT_THROW(synthetic_corpus(s), ValidationError);
  s = CorpusSpec{};
  s.offset = s.length;
  EXPECT_THROW(synthetic_corpus(s), ValidationError);
  s = CorpusSpec{};
  s.generator = Generator::markov;
  s.order = 0;
  EXPECT_THROW(synthetic_corpus(s), ValidationError);
  s.order = 30;
  EXPECT_THROW(synthetic_corpus(s), ValidationError);
  EXPECT_EQ(parse_generator("markov"), Generator::markov);
  EXPECT_THROW(parse_generator("zipf"), ValidationError);
}

TEST(Corpus, CopyTaskIsLearnable) {
  tf::TransformerConfig cfg;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.d_model = 8;
  cfg.d_ff = 32;
  cfg.vocab_size = 4;
  cfg.max_len = 6;
  cfg.positional = true;
  cfg.embedding_sd = 0.1;
  CorpusSpec s;
  s.vocab = 4;
  s.length = 6;
  s.sequences = 16;
  const dyn::TinyLm lm(cfg, synthetic_corpus(s));
  const dyn::TrainResult r = dyn::train_and_record(lm.objective(), lm.init(1), {dyn::OptimizerKind::gd, 1.0}, 200, 199);
  ASSERT_FALSE(r.diverged_at.has_value());
  EXPECT_LT(r.points.back().loss, r.points.front().loss);
  EXPECT_GT(r.points.back().accuracy, 1.0 / 4.0);
}
