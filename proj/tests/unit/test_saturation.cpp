#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>

#include "normlab/error.hpp"
#include "normlab/saturation.hpp"

using namespace normlab;
using namespace normlab::sat;

namespace {

const double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<std::vector<int>> random_sequences(std::size_t n, std::size_t len, std::size_t vocab, Rng& rng) {
  std::uniform_int_distribution<int> d(0, static_cast<int>(vocab) - 1);
  std::vector<std::vector<int>> out(n, std::vector<int>(len));
  for (auto& s : out)
    for (auto& t : s) t = d(rng);
  return out;
}

Tensor identity(std::size_t n) {
  Tensor t({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

}  // namespace

TEST(ScaleParams, Examples) {
  ParameterSet p;
  p.add("t", Tensor::vector({1.0, 2.0}));
  EXPECT_EQ(scale_params(p, 1.0), p);
  const ParameterSet d = scale_params(p, 2.0);
  EXPECT_EQ(d.get("t"), Tensor::vector({2.0, 4.0}));
  EXPECT_DOUBLE_EQ(d.norm(), 2.0 * p.norm());
  EXPECT_THROW(scale_params(p, 0.0), ContractError);
}

TEST(SaturationLevel, ScaleInvariantModelIsFullySaturated) {
  // Layer-normalised linear map: exactly 0-homogeneous in its parameters.
  Graph g;
  const NodeId x = g.input("x", {4, 5});
  const NodeId y = g.layer_norm(g.matmul(x, g.param("w", {5, 6})), 1e-12);
  Rng rng(1);
  std::vector<Tensor> xs;
  for (int i = 0; i < 3; ++i) xs.push_back(randn({4, 5}, rng));
  ParameterSet theta;
  theta.add("w", randn({5, 6}, rng));
  const LayerProbe probe = [&](const ParameterSet& p, std::size_t i) {
    Inputs in;
    in.emplace("x", xs[i]);
    return std::vector<Tensor>{eval_graph(g, y, in, p)};
  };
  for (double c : {1.0, 10.0, 1000.0}) {
    const SaturationReport r = saturation_level(probe, xs.size(), theta, c);
    ASSERT_EQ(r.per_layer.size(), 1u);
    EXPECT_NEAR(r.per_layer[0].similarity, 1.0, 1e-12);
    EXPECT_NEAR(r.overall, 1.0, 1e-12);
  }
  EXPECT_THROW(saturation_level(probe, xs.size(), theta, 0.5), ContractError);
  EXPECT_THROW(saturation_level(probe, 0, theta, 2.0), ContractError);

  const LayerProbe blows_up = [](const ParameterSet& p, std::size_t) {
    const double v = p.get("w")[0] > 1e3 ? std::numeric_limits<double>::infinity() : 1.0;
    return std::vector<Tensor>{Tensor({1, 2}, 1.0), Tensor({1, 2}, v)};
  };
  ParameterSet one;
  one.add("w", Tensor::vector({1.0}));
  try {
    saturation_level(blows_up, 1, one, 1e4);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos);
  }
}

TEST(SaturationLevel, TransformerAtUnitScaleAndLargeScale) {
  tf::TransformerConfig cfg;
  Rng rng(2);
  const ParameterSet theta = tf::init_params(cfg, rng);
  const auto inputs = random_sequences(3, 12, cfg.vocab_size, rng);
  for (Probe probe : {Probe::layers, Probe::heads}) {
    const SaturationReport one = saturation_level(cfg, theta, inputs, 1.0, probe);
    ASSERT_EQ(one.per_layer.size(), cfg.n_layers);
    for (const auto& l : one.per_layer) EXPECT_NEAR(l.similarity, 1.0, 1e-12);
    const SaturationReport big = saturation_level(cfg, theta, inputs, 1000.0, probe);
    for (const auto& l : big.per_layer) {
      EXPECT_GE(l.similarity, -1.0);
      EXPECT_LE(l.similarity, 1.0);
    }
    const auto j = nlohmann::json::parse(report_json(big));
    EXPECT_EQ(j["probe"], probe_name(probe));
    EXPECT_EQ(j["per_layer"].size(), cfg.n_layers);
  }
}

TEST(HardArgmax, Examples) {
  EXPECT_EQ(hard_argmax(std::vector<double>{1, 3, 3}), (std::vector<double>{0, 0.5, 0.5}));
  EXPECT_EQ(hard_argmax(std::vector<double>{5, 1, 0}), (std::vector<double>{1, 0, 0}));
  EXPECT_EQ(hard_argmax(std::vector<double>{2, 2, 2, 2}), (std::vector<double>(4, 0.25)));
  EXPECT_EQ(hard_argmax(std::vector<double>{4, kNegInf, 1}), (std::vector<double>{1, 0, 0}));
  EXPECT_THROW(hard_argmax(std::vector<double>{1, std::nan("")}), ContractError);
  EXPECT_THROW(hard_argmax(std::vector<double>{kNegInf}), ContractError);
}

TEST(HardArgmax, ToleranceIsRelativeToRange) {
  const std::vector<double> row{10.0, 10.0 - 1e-12, 0.0};
  EXPECT_EQ(hard_argmax(row), (std::vector<double>{0.5, 0.5, 0}));
  EXPECT_EQ(hard_argmax(row, 0.0), (std::vector<double>{1, 0, 0}));
}

TEST(HardArgmax, InvariantUnderShiftAndRescale) {
  Rng rng(3);
  std::uniform_int_distribution<int> d(0, 4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> row(7);
    for (auto& v : row) v = d(rng);  // small integers: ties are common
    const auto base = hard_argmax(row, 0.0);
    double sum = 0.0;
    for (double w : base) sum += w;
    EXPECT_DOUBLE_EQ(sum, 1.0);
    std::vector<double> shifted = row, scaled = row;
    for (auto& v : shifted) v += 3.0;
    for (auto& v : scaled) v *= 2.5;
    EXPECT_EQ(hard_argmax(shifted, 0.0), base);
    EXPECT_EQ(hard_argmax(scaled, 0.0), base);
  }
}

TEST(SaturatedAttention, UniqueMaximaSelectValues) {
  Rng rng(4);
  const Tensor h = randn({6, 4}, rng);
  const Tensor v = randn({4, 3}, rng);
  const Tensor out = saturated_attention_forward(h, identity(4), identity(4), v);
  for (std::size_t i = 0; i < 6; ++i) {
    std::size_t best = 0;
    double top = kNegInf;
    for (std::size_t j = 0; j < 6; ++j) {
      double s = 0.0;
      for (std::size_t m = 0; m < 4; ++m) s += h.at(i, m) * h.at(j, m);
      if (s > top) top = s, best = j;
    }
    for (std::size_t c = 0; c < 3; ++c) {
      double hv = 0.0;
      for (std::size_t m = 0; m < 4; ++m) hv += h.at(best, m) * v.at(m, c);
      EXPECT_NEAR(out.at(i, c), hv, 1e-12);
    }
  }
}

TEST(SaturatedAttention, EqualScoresGiveTheMean) {
  Rng rng(5);
  const Tensor h = randn({5, 3}, rng);
  const Tensor v = randn({3, 2}, rng);
  const Tensor zero({3, 3}, 0.0);
  const Tensor out = saturated_attention_forward(h, zero, identity(3), v);
  const Tensor causal = saturated_attention_forward(h, zero, identity(3), v, true);
  for (std::size_t c = 0; c < 2; ++c) {
    double total = 0.0;
    std::vector<double> prefix;
    for (std::size_t j = 0; j < 5; ++j) {
      double hv = 0.0;
      for (std::size_t m = 0; m < 3; ++m) hv += h.at(j, m) * v.at(m, c);
      total += hv;
      prefix.push_back(total / static_cast<double>(j + 1));
    }
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_NEAR(out.at(i, c), total / 5.0, 1e-12);
      EXPECT_NEAR(causal.at(i, c), prefix[i], 1e-12);
    }
  }
}

TEST(SaturatedAttention, SoftmaxLimit) {
  Rng rng(6);
  int checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor h = randn({6, 4}, rng), q = randn({4, 4}, rng), k = randn({4, 4}, rng), v = randn({4, 3}, rng);
    const Tensor hard = saturated_attention_forward(h, q, k, v);
    const Tensor soft = softmax_attention_forward(h, q, k, v, 1e4);
    // Skip draws whose top two scores nearly tie; the limit is slow there.
    double min_gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < 6; ++i) {
      std::vector<double> row;
      for (std::size_t j = 0; j < 6; ++j) {
        double acc = 0.0;
        for (std::size_t a = 0; a < 4; ++a)
          for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t m = 0; m < 4; ++m) acc += h.at(i, a) * q.at(a, m) * h.at(j, b) * k.at(b, m);
        row.push_back(acc);
      }
      std::sort(row.rbegin(), row.rend());
      min_gap = std::min(min_gap, row[0] - row[1]);
    }
    if (min_gap < 1e-2) continue;
    ++checked;
    EXPECT_LE(max_abs_diff(hard, soft), 1e-6) << "trial " << trial;
  }
  EXPECT_GE(checked, 30);
}

TEST(HeadStats, OneHotAndUniformRows) {
  Tensor onehot({4, 4}, 0.0);
  for (std::size_t i = 0; i < 4; ++i) onehot.at(i, (i + 1) % 4) = 1.0;
  const Tensor uniform({10, 10}, 0.1);
  const HeadAttentionStats s = head_attention_stats({{"sharp", {onehot}}, {"flat", {uniform}}}, 0.9);
  ASSERT_EQ(s.heads.size(), 2u);
  EXPECT_EQ(s.heads[0].counts, std::vector<std::size_t>(4, 1));
  EXPECT_EQ(s.heads[0].classification, HeadClass::argmax_like);
  EXPECT_EQ(s.heads[1].counts, std::vector<std::size_t>(10, 9));
  EXPECT_EQ(s.heads[1].classification, HeadClass::mean_like);
  EXPECT_DOUBLE_EQ(s.heads[1].mean_visible, 10.0);

  const std::string csv = head_histogram_csv(s);
  EXPECT_EQ(csv, "head,count,frequency\nsharp,1,1\nflat,9,1\n");
  const auto j = nlohmann::json::parse(head_stats_json(s));
  EXPECT_EQ(j["heads"][1]["class"], "mean-like");
}

TEST(HeadStats, CausalVisibleLengthAndIntermediate) {
  // Causal uniform rows: query i spreads over i + 1 positions.
  Tensor a({8, 8}, 0.0);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j <= i; ++j) a.at(i, j) = 1.0 / static_cast<double>(i + 1);
  const HeadAttentionStats s = head_attention_stats({{"prefix", {a}}}, 0.9, true);
  EXPECT_DOUBLE_EQ(s.heads[0].mean_visible, 4.5);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(s.heads[0].counts[i], static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(i + 1) - 1e-9)));
  }

  // Three equal positions out of twelve: neither sharp nor flat.
  Tensor m({12, 12}, 0.0);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 3; ++j) m.at(i, (i + j) % 12) = 1.0 / 3.0;
  EXPECT_EQ(head_attention_stats({{"mid", {m}}}).heads[0].classification, HeadClass::intermediate);
}

TEST(HeadStats, Errors) {
  const Tensor bad({2, 2}, 0.4);
  EXPECT_THROW(head_attention_stats({{"bad", {bad}}}), ContractError);
  const Tensor ok({2, 2}, 0.5);
  EXPECT_THROW(head_attention_stats({{"ok", {ok}}}, 1.0), ContractError);
  EXPECT_THROW(head_attention_stats({{"ok", {ok}}}, 0.0), ContractError);
  EXPECT_THROW(head_attention_stats({{"empty", {}}}), ContractError);
}

TEST(HeadStats, CollectFromTransformer) {
  tf::TransformerConfig cfg;
  Rng rng(7);
  const ParameterSet theta = tf::init_params(cfg, rng);
  const auto inputs = random_sequences(2, 10, cfg.vocab_size, rng);
  const auto heads = collect_attention(cfg, theta, inputs);
  ASSERT_EQ(heads.size(), cfg.n_layers * cfg.n_heads);
  EXPECT_EQ(heads[5].name, "l1.h1");
  EXPECT_EQ(heads[5].matrices.size(), 2u);
  const HeadAttentionStats s = head_attention_stats(heads, 0.9, true);
  for (const auto& h : s.heads)
    for (std::size_t c : h.counts) {
      EXPECT_GE(c, 1u);
      EXPECT_LE(c, 10u);
    }
}
