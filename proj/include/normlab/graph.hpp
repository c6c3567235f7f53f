#pragma once

// Append-only computation graph over tensors with reverse-mode
// differentiation that is itself expressed as graph nodes. Gradients are
// therefore differentiable again, which is how Hessian-vector products are
// formed.

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "normlab/tensor.hpp"

namespace normlab {

using NodeId = std::size_t;

enum class Op : std::uint8_t {
  input,
  param,
  constant,
  add,
  sub,
  mul,
  div,
  neg,
  scale,
  add_scalar,
  exp,
  log,
  sqrt,
  relu,
  step,
  sigmoid,
  tanh,
  softplus,
  softmax,
  matmul,
  transpose,
  sum_all,
  row_sum,
  col_sum,
  broadcast_rows,
  broadcast_cols,
  broadcast_scalar,
  concat_cols,
  slice_cols,
  pad_cols,
  reshape,
  mask_fill,
  row_norm,
  bce,
  bce_residual,
  softmax_ce,
  softmax_ce_residual,
};

std::string_view op_name(Op op);

struct Node {
  Op op{};
  std::vector<NodeId> inputs;
  Shape shape;
  double scalar = 0.0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string name;
  std::shared_ptr<const Tensor> value;
};

class Graph {
 public:
  // Leaves. Repeating input()/param() with the same name returns the
  // existing node (the shape must agree).
  NodeId input(const std::string& name, Shape shape);
  NodeId param(const std::string& name, Shape shape);
  NodeId constant(Tensor value);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId neg(NodeId a);
  NodeId scale(NodeId a, double factor);
  NodeId add_scalar(NodeId a, double offset);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId sqrt(NodeId a);
  NodeId relu(NodeId a);
  /// Heaviside step (1 where x > 0). Treated as having zero derivative.
  NodeId step(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);
  NodeId softplus(NodeId a);
  /// Row-wise softmax of a matrix; -inf entries get zero weight.
  NodeId softmax(NodeId a);

  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId sum_all(NodeId a);
  NodeId row_sum(NodeId a);
  NodeId col_sum(NodeId a);
  NodeId broadcast_rows(NodeId row, std::size_t rows);
  NodeId broadcast_cols(NodeId col, std::size_t cols);
  NodeId broadcast_scalar(NodeId s, Shape shape);
  NodeId concat_cols(std::span<const NodeId> parts);
  NodeId slice_cols(NodeId a, std::size_t begin, std::size_t end);
  NodeId pad_cols(NodeId a, std::size_t begin, std::size_t total);
  NodeId reshape(NodeId a, Shape shape);
  /// Entries where `mask` is 0 are replaced by `fill`.
  NodeId mask_fill(NodeId a, Tensor mask, double fill);
  /// Per-row l2 norm, shape [rows, 1]. Evaluation fails with
  /// DegenerateError when a row norm is at or below `min_norm`.
  NodeId row_norm(NodeId a, double min_norm = 0.0);

  /// Elementwise softplus(f) - y f with labels y in {0,1}.
  NodeId bce(NodeId logits, NodeId labels);
  NodeId bce_residual(NodeId logits, NodeId labels);
  /// Per-row softmax cross-entropy against one-hot labels, shape [rows, 1].
  NodeId softmax_ce(NodeId logits, NodeId labels);
  NodeId softmax_ce_residual(NodeId logits, NodeId labels);

  // Composites.
  NodeId mean_all(NodeId a);
  NodeId square(NodeId a) { return mul(a, a); }
  /// Row-wise lnorm without a stabilising epsilon.
  NodeId layer_norm(NodeId a, double tolerance);
  NodeId dot(NodeId a, NodeId b) { return sum_all(mul(a, b)); }

  /// Appends nodes computing d(output)/d(wrt_k), seeded with `seed` (a node
  /// of the output's shape) or with ones. Unreached targets get zeros.
  std::vector<NodeId> gradients(NodeId output, std::span<const NodeId> wrt,
                                std::optional<NodeId> seed = std::nullopt);

  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  const Shape& shape(NodeId id) const { return nodes_.at(id).shape; }
  void set_label(NodeId id, std::string label);
  std::string describe(NodeId id) const;

  std::optional<NodeId> find_param(const std::string& name) const;
  /// (name, node) for every parameter leaf, in creation order.
  const std::vector<std::pair<std::string, NodeId>>& params() const { return params_; }

 private:
  NodeId push(Node node);
  NodeId leaf(Op op, const std::string& name, Shape shape);
  const Shape& checked_matrix(NodeId id, std::string_view what) const;
  void require_same_shape(NodeId a, NodeId b, std::string_view what) const;
  NodeId unary(Op op, NodeId a);
  NodeId binary_elementwise(Op op, NodeId a, NodeId b);
  std::optional<NodeId> backward(NodeId id, std::size_t slot, NodeId grad);

  std::vector<Node> nodes_;
  std::vector<std::string> labels_;
  std::unordered_map<std::string, NodeId> inputs_;
  std::unordered_map<std::string, NodeId> param_index_;
  std::vector<std::pair<std::string, NodeId>> params_;
};

using Inputs = std::map<std::string, Tensor, std::less<>>;

/// Values of every node needed for the requested outputs. Nodes that were
/// not needed stay empty.
class Evaluation {
 public:
  explicit Evaluation(std::size_t n) : values_(n) {}
  const Tensor& operator[](NodeId id) const { return values_.at(id); }
  Tensor& slot(NodeId id) { return values_.at(id); }

 private:
  std::vector<Tensor> values_;
};

/// Forward pass. Structural errors name the offending node; a NaN produced
/// by any node raises NumericError naming that node.
Evaluation evaluate(const Graph& graph, std::span<const NodeId> outputs, const Inputs& inputs,
                    const ParameterSet& params);

/// eval_graph: value of a single node.
Tensor eval_graph(const Graph& graph, NodeId output, const Inputs& inputs,
                  const ParameterSet& params);

}  // namespace normlab
