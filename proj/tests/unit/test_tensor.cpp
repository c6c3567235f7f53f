#include <gtest/gtest.h>

#include <cmath>

#include "normlab/error.hpp"
#include "normlab/functional.hpp"
#include "normlab/tensor.hpp"

using namespace normlab;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), StructuralError);
  EXPECT_THROW(Tensor({0, 2}), StructuralError);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(Tensor, NormAndSum) {
  Tensor t = Tensor::vector({3, 4});
  EXPECT_DOUBLE_EQ(t.norm(), 5.0);
  EXPECT_DOUBLE_EQ(t.sum(), 7.0);
  EXPECT_THROW((void)t.item(), ContractError);
}

TEST(ParameterSet, FlattenRoundTripsExactly) {
  ParameterSet p;
  p.add("a", Tensor::matrix({{1.25, -2}, {3, 4}}));
  p.add("b", Tensor::vector({0.1, 0.2, 0.3}));
  EXPECT_EQ(p.total_dim(), 7u);
  const auto flat = p.flatten();
  ParameterSet q = p.unflatten(flat);
  EXPECT_EQ(p, q);
  EXPECT_EQ(q.names(), (std::vector<std::string>{"a", "b"}));
}

TEST(ParameterSet, NormOverAllGroups) {
  ParameterSet p;
  p.add("x", Tensor::vector({1, 2}));
  p.add("y", Tensor::scalar(2));
  EXPECT_DOUBLE_EQ(p.norm(), 3.0);
  EXPECT_DOUBLE_EQ(p.scaled(2).norm(), 6.0);
  EXPECT_DOUBLE_EQ(p.dot(p), 9.0);
  EXPECT_THROW(p.add("x", Tensor::scalar(1)), ContractError);
}

TEST(ParameterSet, Cosine) {
  ParameterSet a, b;
  a.add("w", Tensor::vector({1, 1}));
  b.add("w", Tensor::vector({1, 1}));
  EXPECT_DOUBLE_EQ(cosine(a, b), 1.0);
  EXPECT_DOUBLE_EQ(cosine(a, a.zeros_like()), 0.0);
}

TEST(Activation, Values) {
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  const Tensor s = activate(Activation::softmax, Tensor::vector({0, 0}), 0);
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  const double e2 = std::exp(2.0);
  EXPECT_NEAR(activate(Activation::tanh, Tensor::scalar(1))[0], (e2 - 1) / (e2 + 1), 1e-15);
  EXPECT_NEAR(activate(Activation::tanh, Tensor::scalar(1))[0], 0.76159415595576, 1e-13);
  EXPECT_THROW(activate(Activation::softmax, Tensor::vector({1, 2})), StructuralError);
}

TEST(Activation, SoftmaxShiftInvariantAndNormalised) {
  Tensor x = Tensor::matrix({{1, 2, 3}, {-5, 0, 700}});
  Tensor y = x;
  for (auto& v : y.data()) v += 123.0;
  const Tensor a = softmax_rows(x);
  const Tensor b = softmax_rows(y);
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += a.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_LE(max_abs_diff(a, b), 1e-12);
}

TEST(Activation, SoftmaxAlongAxisZero) {
  Tensor x = Tensor::matrix({{0, 1}, {0, 1}});
  const Tensor s = activate(Activation::softmax, x, 0);
  EXPECT_DOUBLE_EQ(s.at(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(s.at(1, 0), 0.5);
}

TEST(LayerNorm, HandValues) {
  const Tensor y = layer_norm(Tensor::vector({1, 3}));
  EXPECT_NEAR(y[0], -1 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(y[1], 1 / std::sqrt(2.0), 1e-15);
  EXPECT_THROW(layer_norm(Tensor::vector({2, 2, 2})), DegenerateError);
}

TEST(LayerNorm, ZeroMeanUnitNorm) {
  Tensor x = Tensor::matrix({{0.3, -1.7, 2.2, 9.0}, {1e3, -2e3, 5, 7}});
  const Tensor y = layer_norm(x);
  for (std::size_t r = 0; r < 2; ++r) {
    double m = 0, q = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      m += y.at(r, c);
      q += y.at(r, c) * y.at(r, c);
    }
    EXPECT_LE(std::abs(m / 4), 1e-12);
    EXPECT_LE(std::abs(std::sqrt(q) - 1), 1e-12);
  }
}

TEST(Loss, Values) {
  EXPECT_NEAR(loss(Loss::binary_ce, Tensor::scalar(0), Tensor::scalar(1)), std::log(2.0), 1e-15);
  EXPECT_NEAR(loss(Loss::softmax_ce, Tensor::matrix({{0, 0}}), Tensor::matrix({{1, 0}})), std::log(2.0),
              1e-15);
  const double s2 = 1 / (1 + std::exp(-2.0));
  EXPECT_NEAR(loss_gradient(Loss::binary_ce, Tensor::scalar(2), Tensor::scalar(1))[0], s2 - 1, 1e-15);
  EXPECT_NEAR(s2 - 1, -0.11920292202211755, 1e-15);
  EXPECT_THROW(loss(Loss::binary_ce, Tensor::scalar(0), Tensor::scalar(0.5)), ContractError);
  EXPECT_THROW(loss(Loss::softmax_ce, Tensor::matrix({{0, 0}}), Tensor::matrix({{1, 1}})), ContractError);
}

TEST(Loss, ResidualKeepsTinyValues) {
  // sigma(40) - 1 rounds to 0 in double; the residual must not.
  const double r = binary_ce_residual(40.0, 1.0);
  EXPECT_LT(r, 0.0);
  EXPECT_NEAR(r / -std::exp(-40.0), 1.0, 1e-12);
  const Tensor g = softmax_ce_residuals(Tensor::matrix({{50, 0, 0}}), Tensor::matrix({{1, 0, 0}}));
  EXPECT_LT(g.at(0, 0), 0.0);
  EXPECT_NEAR(g.at(0, 0) + g.at(0, 1) + g.at(0, 2), 0.0, 1e-300);
}
