#pragma once

// Stand-alone numeric kernels on tensors. The graph primitives call into
// these for their forward values.

#include <optional>

#include "normlab/tensor.hpp"

namespace normlab {

enum class Activation { sigmoid, tanh, relu, softmax };

/// Numerically stable logistic function.
double sigmoid(double x);

/// log(1 + exp(x)) without overflow.
double softplus(double x);

/// Elementwise sigmoid/tanh/relu, or softmax along `axis` (max-subtracted).
/// Softmax requires an axis; entries equal to -inf are treated as masked
/// and receive zero weight.
Tensor activate(Activation kind, const Tensor& x, std::optional<std::size_t> axis = std::nullopt);

/// Row-wise softmax of a rank-1 or rank-2 tensor.
Tensor softmax_rows(const Tensor& x);

/// Centred row norms below this are rejected by layer_norm.
inline constexpr double kLayerNormTolerance = 1e-12;

/// Row-wise lnorm(x)_i = (x_i - mean(x)) / ||x - mean(x)||, with no
/// stabilising epsilon. Throws DegenerateError when a centred row has norm
/// at or below kLayerNormTolerance.
Tensor layer_norm(const Tensor& x);

enum class Loss { binary_ce, softmax_ce };

/// Mean loss over the batch.
///
/// binary_ce: logits and labels hold one value per example, labels in {0,1}.
/// softmax_ce: logits are [batch, classes]; labels are one-hot rows of the
/// same shape.
double loss(Loss kind, const Tensor& logits, const Tensor& labels);

/// Gradient of loss() with respect to the logits: (sigma(f) - y)/N or
/// (softmax(f) - y)/N. The label entry is computed as a sum of the
/// off-label probabilities so tiny gradients do not cancel to zero.
Tensor loss_gradient(Loss kind, const Tensor& logits, const Tensor& labels);

/// sigma(f) - y for a single label in {0,1}, evaluated without cancellation.
double binary_ce_residual(double f, double y);

/// Per-example softmax(f) - y for one-hot labels, evaluated without
/// cancellation at the labelled entry. Shapes [N, v].
Tensor softmax_ce_residuals(const Tensor& logits, const Tensor& labels);

}  // namespace normlab
