#include <gtest/gtest.h>

#include <cmath>

#include "normlab/error.hpp"
#include "normlab/experiments.hpp"
#include "normlab/homogeneity.hpp"

using namespace normlab;
using namespace normlab::dyn;

namespace {

tf::TransformerConfig small_model() {
  tf::TransformerConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ff = 32;
  c.vocab_size = 5;
  c.max_len = 6;
  c.positional = true;
  c.embedding_sd = 0.1;
  return c;
}

data::CorpusSpec small_corpus() {
  data::CorpusSpec s;
  s.vocab = 5;
  s.length = 6;
  s.sequences = 8;
  return s;
}

std::vector<TrajectoryPoint> norms(std::vector<double> v) {
  std::vector<TrajectoryPoint> pts;
  for (std::size_t i = 0; i < v.size(); ++i) {
    TrajectoryPoint p;
    p.t = i + 1;
    p.norm = v[i];
    pts.push_back(p);
  }
  return pts;
}

}  // namespace

TEST(GrowthFraction, Examples) {
  EXPECT_DOUBLE_EQ(growth_fraction(norms({1, 2, 3, 4}), 0), 1.0);
  EXPECT_DOUBLE_EQ(growth_fraction(norms({1, 2, 1, 2, 1}), 0), 0.5);
  // Pairs starting at or before the warm-up are ignored.
  EXPECT_DOUBLE_EQ(growth_fraction(norms({5, 1, 2, 3}), 1), 1.0);
  EXPECT_THROW(growth_fraction(norms({1, 2}), 1), ContractError);
}

TEST(TinyLm, ContractsAndInit) {
  const data::Corpus corpus = data::synthetic_corpus(small_corpus());
  tf::TransformerConfig wrong = small_model();
  wrong.vocab_size = 6;
  EXPECT_THROW(TinyLm(wrong, corpus), ContractError);
  wrong = small_model();
  wrong.max_len = 4;
  EXPECT_THROW(TinyLm(wrong, corpus), ContractError);

  const TinyLm lm(small_model(), corpus);
  const ParameterSet p = lm.init(3);
  EXPECT_EQ(p, lm.init(3));
  EXPECT_TRUE(p.contains("cls"));
  EXPECT_EQ(p.get("cls").shape(), (Shape{8, 5}));
  const Objective obj = lm.objective();
  EXPECT_EQ(obj.measured(p), tf::weight_groups(p));
  const auto r = obj.value_and_grad(p);
  EXPECT_TRUE(std::isfinite(r.value));
  const double acc = obj.accuracy(p);
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
}

TEST(TinyLm, RunReportsTelemetry) {
  const TinyLm lm(small_model(), data::synthetic_corpus(small_corpus()));
  TinyLmOptions o;
  o.steps = 30;
  o.warmup = 5;
  o.probe_inputs = 3;
  const TinyLmRun r = run_tiny_lm(lm, o, 2);
  EXPECT_EQ(r.train.points.size(), 30u);
  EXPECT_GE(r.growth_fraction, 0.0);
  EXPECT_LE(r.growth_fraction, 1.0);
  EXPECT_EQ(r.saturation_init.per_layer.size(), 1u);
  EXPECT_EQ(r.heads.heads.size(), 2u);
  EXPECT_EQ(r.heads.heads.front().counts.size(), 3u * 6u);
}

TEST(SoftmaxProjection, DeterministicBoundedAndScaled) {
  ProjectionScanSpec spec;
  spec.model = small_model();
  spec.batch = 3;
  spec.length = 6;
  const double a = softmax_projection_cell(spec, 4, 1.0, 9);
  EXPECT_EQ(a, softmax_projection_cell(spec, 4, 1.0, 9));
  EXPECT_LE(std::abs(a), 1.0);
  EXPECT_NE(a, softmax_projection_cell(spec, 4, 1.0, 10));
  spec.classifier_in_theta = true;
  spec.embedding_in_theta = true;
  EXPECT_LE(std::abs(softmax_projection_cell(spec, 4, 10.0, 9)), 1.0);
  EXPECT_THROW(softmax_projection_cell(spec, 1, 1.0, 9), ContractError);
  EXPECT_THROW(softmax_projection_cell(spec, 4, 0.0, 9), ContractError);
}

TEST(SoftmaxProjection, ScanShape) {
  ProjectionScanSpec spec;
  spec.model = small_model();
  spec.batch = 2;
  spec.length = 6;
  const std::vector<double> v{2, 3}, c{1, 10, 100};
  const GridResult g = softmax_projection_scan(spec, v, c, 2, 4);
  ASSERT_EQ(g.cells.size(), 6u);
  for (const auto& cell : g.cells) {
    EXPECT_EQ(cell.samples.size(), 2u);
    EXPECT_TRUE(cell.error.empty());
  }
}

TEST(WeightDecay, StrongDecayShrinksAndNoDecayGrows) {
  SweepSpec spec;
  spec.model = small_model();
  spec.corpus = small_corpus();
  spec.steps = 40;
  const double decayed = weight_decay_cell(spec, 1.0, 0.1, 1);
  const double free = weight_decay_cell(spec, 1.0, 0.0, 1);
  EXPECT_LT(decayed, 0.5);
  EXPECT_GT(free, 1.0);
  EXPECT_LT(decayed, free);
}

TEST(Sublayer, ExactlyOneHomogeneous) {
  const SublayerModel m = feedforward_sublayer_model(SublayerSpec{}, 4);
  const homog::VectorFunction f = [&](const ParameterSet& p) { return m.model.logits(p); };
  for (double c : {2.0, 10.0, 1000.0}) {
    EXPECT_NEAR(homog::estimate_degree_empirical(f, m.theta0, c), 1.0, 1e-9) << "c = " << c;
  }
  Tensor y = m.model.logits(m.theta0);
  for (auto& v : y.data()) v = 0.0;
  for (std::size_t i = 0; i < y.rows(); ++i) y.at(i, i % y.cols()) = 1.0;
  EXPECT_TRUE(std::isfinite(m.model.loss(m.theta0, y).value));
  EXPECT_THROW(feedforward_sublayer_model(SublayerSpec{1, 4, 8, 2}, 0), ContractError);
}

TEST(Sublayer, EquilibriumCurveOrdersByAccuracy) {
  const SublayerModel m = feedforward_sublayer_model(SublayerSpec{}, 0);
  const std::vector<double> acc{0.5, 0.9, 1.0};
  const auto grid = log_space(1.0, 1e4, 40);
  const auto scans = equilibrium_curve(m, acc, grid, WrongLabel::random_other, 3);
  ASSERT_EQ(scans.size(), 3u);
  ASSERT_TRUE(scans[0].rho_star && scans[1].rho_star);
  EXPECT_LE(*scans[0].rho_star, *scans[1].rho_star);
  EXPECT_FALSE(scans[2].rho_star.has_value());
}

TEST(LogSpace, Examples) {
  const auto v = log_space(1.0, 100.0, 3);
  ASSERT_EQ(v.size(), 3u);
  EXPECT_DOUBLE_EQ(v[0], 1.0);
  EXPECT_NEAR(v[1], 10.0, 1e-12);
  EXPECT_NEAR(v[2], 100.0, 1e-12);
  EXPECT_EQ(log_space(5.0, 5.0, 1), std::vector<double>{5.0});
  EXPECT_THROW(log_space(0.0, 1.0, 3), ContractError);
  EXPECT_THROW(log_space(2.0, 1.0, 3), ContractError);
}
