#include "normlab/graph.hpp"

#include <algorithm>
#include <sstream>

#include "normlab/error.hpp"

namespace normlab {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::param: return "param";
    case Op::constant: return "constant";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::neg: return "neg";
    case Op::scale: return "scale";
    case Op::add_scalar: return "add_scalar";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::sqrt: return "sqrt";
    case Op::relu: return "relu";
    case Op::step: return "step";
    case Op::sigmoid: return "sigmoid";
    case Op::tanh: return "tanh";
    case Op::softplus: return "softplus";
    case Op::softmax: return "softmax";
    case Op::matmul: return "matmul";
    case Op::transpose: return "transpose";
    case Op::sum_all: return "sum_all";
    case Op::row_sum: return "row_sum";
    case Op::col_sum: return "col_sum";
    case Op::broadcast_rows: return "broadcast_rows";
    case Op::broadcast_cols: return "broadcast_cols";
    case Op::broadcast_scalar: return "broadcast_scalar";
    case Op::concat_cols: return "concat_cols";
    case Op::slice_cols: return "slice_cols";
    case Op::pad_cols: return "pad_cols";
    case Op::reshape: return "reshape";
    case Op::mask_fill: return "mask_fill";
    case Op::row_norm: return "row_norm";
    case Op::bce: return "bce";
    case Op::bce_residual: return "bce_residual";
    case Op::softmax_ce: return "softmax_ce";
    case Op::softmax_ce_residual: return "softmax_ce_residual";
  }
  return "?";
}

NodeId Graph::push(Node node) {
  for (NodeId in : node.inputs) {
    if (in >= nodes_.size()) {
      throw StructuralError("node " + std::to_string(nodes_.size()) + " (" +
                            std::string(op_name(node.op)) + ") refers to missing node " +
                            std::to_string(in));
    }
  }
  nodes_.push_back(std::move(node));
  labels_.emplace_back();
  return nodes_.size() - 1;
}

void Graph::set_label(NodeId id, std::string label) { labels_.at(id) = std::move(label); }

std::string Graph::describe(NodeId id) const {
  const Node& n = nodes_.at(id);
  std::ostringstream os;
  os << "node " << id << " (" << op_name(n.op);
  if (!n.name.empty()) os << " '" << n.name << "'";
  if (!labels_[id].empty()) os << " [" << labels_[id] << "]";
  os << ")";
  return os.str();
}

NodeId Graph::leaf(Op op, const std::string& name, Shape shape) {
  auto& index = op == Op::input ? inputs_ : param_index_;
  if (auto it = index.find(name); it != index.end()) {
    if (nodes_[it->second].shape != shape) {
      throw StructuralError("leaf '" + name + "' redeclared with shape " + shape_string(shape) +
                            ", was " + shape_string(nodes_[it->second].shape));
    }
    return it->second;
  }
  if (shape_size(shape) == 0) throw StructuralError("leaf '" + name + "' has an empty shape");
  Node n;
  n.op = op;
  n.shape = std::move(shape);
  n.name = name;
  const NodeId id = push(std::move(n));
  index.emplace(name, id);
  if (op == Op::param) params_.emplace_back(name, id);
  return id;
}

NodeId Graph::input(const std::string& name, Shape shape) { return leaf(Op::input, name, std::move(shape)); }
NodeId Graph::param(const std::string& name, Shape shape) { return leaf(Op::param, name, std::move(shape)); }

std::optional<NodeId> Graph::find_param(const std::string& name) const {
  if (auto it = param_index_.find(name); it != param_index_.end()) return it->second;
  return std::nullopt;
}

NodeId Graph::constant(Tensor value) {
  if (value.empty()) throw StructuralError("constant node needs a non-empty tensor");
  Node n;
  n.op = Op::constant;
  n.shape = value.shape();
  n.value = std::make_shared<const Tensor>(std::move(value));
  return push(std::move(n));
}

const Shape& Graph::checked_matrix(NodeId id, std::string_view what) const {
  const Shape& s = nodes_.at(id).shape;
  if (s.size() != 2) {
    throw StructuralError(std::string(what) + ": " + describe(id) + " must be a matrix, has shape " +
                          shape_string(s));
  }
  return s;
}

void Graph::require_same_shape(NodeId a, NodeId b, std::string_view what) const {
  if (nodes_.at(a).shape != nodes_.at(b).shape) {
    throw StructuralError(std::string(what) + ": shape mismatch between " + describe(a) + " " +
                          shape_string(nodes_[a].shape) + " and " + describe(b) + " " +
                          shape_string(nodes_[b].shape));
  }
}

NodeId Graph::unary(Op op, NodeId a) {
  Node n;
  n.op = op;
  n.inputs = {a};
  n.shape = nodes_.at(a).shape;
  return push(std::move(n));
}

NodeId Graph::binary_elementwise(Op op, NodeId a, NodeId b) {
  require_same_shape(a, b, op_name(op));
  Node n;
  n.op = op;
  n.inputs = {a, b};
  n.shape = nodes_[a].shape;
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) { return binary_elementwise(Op::add, a, b); }
NodeId Graph::sub(NodeId a, NodeId b) { return binary_elementwise(Op::sub, a, b); }
NodeId Graph::mul(NodeId a, NodeId b) { return binary_elementwise(Op::mul, a, b); }
NodeId Graph::div(NodeId a, NodeId b) { return binary_elementwise(Op::div, a, b); }
NodeId Graph::neg(NodeId a) { return unary(Op::neg, a); }

NodeId Graph::scale(NodeId a, double factor) {
  NodeId id = unary(Op::scale, a);
  nodes_[id].scalar = factor;
  return id;
}

NodeId Graph::add_scalar(NodeId a, double offset) {
  NodeId id = unary(Op::add_scalar, a);
  nodes_[id].scalar = offset;
  return id;
}

NodeId Graph::exp(NodeId a) { return unary(Op::exp, a); }
NodeId Graph::log(NodeId a) { return unary(Op::log, a); }
NodeId Graph::sqrt(NodeId a) { return unary(Op::sqrt, a); }
NodeId Graph::relu(NodeId a) { return unary(Op::relu, a); }
NodeId Graph::step(NodeId a) { return unary(Op::step, a); }
NodeId Graph::sigmoid(NodeId a) { return unary(Op::sigmoid, a); }
NodeId Graph::tanh(NodeId a) { return unary(Op::tanh, a); }
NodeId Graph::softplus(NodeId a) { return unary(Op::softplus, a); }

NodeId Graph::softmax(NodeId a) {
  checked_matrix(a, "softmax");
  return unary(Op::softmax, a);
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Shape& sa = checked_matrix(a, "matmul");
  const Shape& sb = checked_matrix(b, "matmul");
  if (sa[1] != sb[0]) {
    throw StructuralError("matmul: inner dimensions differ between " + describe(a) + " " +
                          shape_string(sa) + " and " + describe(b) + " " + shape_string(sb));
  }
  Node n;
  n.op = Op::matmul;
  n.inputs = {a, b};
  n.shape = {sa[0], sb[1]};
  return push(std::move(n));
}

NodeId Graph::transpose(NodeId a) {
  const Shape& s = checked_matrix(a, "transpose");
  Node n;
  n.op = Op::transpose;
  n.inputs = {a};
  n.shape = {s[1], s[0]};
  return push(std::move(n));
}

NodeId Graph::sum_all(NodeId a) {
  Node n;
  n.op = Op::sum_all;
  n.inputs = {a};
  n.shape = {1};
  return push(std::move(n));
}

NodeId Graph::mean_all(NodeId a) {
  const double count = static_cast<double>(shape_size(nodes_.at(a).shape));
  return scale(sum_all(a), 1.0 / count);
}

NodeId Graph::row_sum(NodeId a) {
  const Shape& s = checked_matrix(a, "row_sum");
  Node n;
  n.op = Op::row_sum;
  n.inputs = {a};
  n.shape = {s[0], 1};
  return push(std::move(n));
}

NodeId Graph::col_sum(NodeId a) {
  const Shape& s = checked_matrix(a, "col_sum");
  Node n;
  n.op = Op::col_sum;
  n.inputs = {a};
  n.shape = {1, s[1]};
  return push(std::move(n));
}

NodeId Graph::broadcast_rows(NodeId row, std::size_t rows) {
  const Shape& s = checked_matrix(row, "broadcast_rows");
  if (s[0] != 1) throw StructuralError("broadcast_rows: " + describe(row) + " is not a single row");
  Node n;
  n.op = Op::broadcast_rows;
  n.inputs = {row};
  n.shape = {rows, s[1]};
  return push(std::move(n));
}

NodeId Graph::broadcast_cols(NodeId col, std::size_t cols) {
  const Shape& s = checked_matrix(col, "broadcast_cols");
  if (s[1] != 1) throw StructuralError("broadcast_cols: " + describe(col) + " is not a single column");
  Node n;
  n.op = Op::broadcast_cols;
  n.inputs = {col};
  n.shape = {s[0], cols};
  return push(std::move(n));
}

NodeId Graph::broadcast_scalar(NodeId s, Shape shape) {
  if (shape_size(nodes_.at(s).shape) != 1) {
    throw StructuralError("broadcast_scalar: " + describe(s) + " is not a scalar");
  }
  if (shape_size(shape) == 0) throw StructuralError("broadcast_scalar to an empty shape");
  Node n;
  n.op = Op::broadcast_scalar;
  n.inputs = {s};
  n.shape = std::move(shape);
  return push(std::move(n));
}

NodeId Graph::concat_cols(std::span<const NodeId> parts) {
  if (parts.empty()) throw StructuralError("concat_cols of nothing");
  const std::size_t rows = checked_matrix(parts[0], "concat_cols")[0];
  std::size_t cols = 0;
  for (NodeId p : parts) {
    const Shape& s = checked_matrix(p, "concat_cols");
    if (s[0] != rows) throw StructuralError("concat_cols: row count differs at " + describe(p));
    cols += s[1];
  }
  Node n;
  n.op = Op::concat_cols;
  n.inputs.assign(parts.begin(), parts.end());
  n.shape = {rows, cols};
  return push(std::move(n));
}

NodeId Graph::slice_cols(NodeId a, std::size_t begin, std::size_t end) {
  const Shape& s = checked_matrix(a, "slice_cols");
  if (begin >= end || end > s[1]) {
    throw StructuralError("slice_cols: bad range [" + std::to_string(begin) + "," +
                          std::to_string(end) + ") for " + describe(a));
  }
  Node n;
  n.op = Op::slice_cols;
  n.inputs = {a};
  n.shape = {s[0], end - begin};
  n.begin = begin;
  n.end = end;
  return push(std::move(n));
}

NodeId Graph::pad_cols(NodeId a, std::size_t begin, std::size_t total) {
  const Shape& s = checked_matrix(a, "pad_cols");
  if (begin + s[1] > total) throw StructuralError("pad_cols: " + describe(a) + " does not fit");
  Node n;
  n.op = Op::pad_cols;
  n.inputs = {a};
  n.shape = {s[0], total};
  n.begin = begin;
  n.end = begin + s[1];
  return push(std::move(n));
}

NodeId Graph::reshape(NodeId a, Shape shape) {
  if (shape_size(shape) != shape_size(nodes_.at(a).shape)) {
    throw StructuralError("reshape: " + describe(a) + " " + shape_string(nodes_[a].shape) +
                          " cannot become " + shape_string(shape));
  }
  Node n;
  n.op = Op::reshape;
  n.inputs = {a};
  n.shape = std::move(shape);
  return push(std::move(n));
}

NodeId Graph::mask_fill(NodeId a, Tensor mask, double fill) {
  if (mask.shape() != nodes_.at(a).shape) {
    throw StructuralError("mask_fill: mask shape " + shape_string(mask.shape()) + " differs from " +
                          describe(a));
  }
  NodeId id = unary(Op::mask_fill, a);
  nodes_[id].scalar = fill;
  nodes_[id].value = std::make_shared<const Tensor>(std::move(mask));
  return id;
}

NodeId Graph::row_norm(NodeId a, double min_norm) {
  const Shape& s = checked_matrix(a, "row_norm");
  Node n;
  n.op = Op::row_norm;
  n.inputs = {a};
  n.shape = {s[0], 1};
  n.scalar = min_norm;
  return push(std::move(n));
}

NodeId Graph::bce(NodeId logits, NodeId labels) { return binary_elementwise(Op::bce, logits, labels); }

NodeId Graph::bce_residual(NodeId logits, NodeId labels) {
  return binary_elementwise(Op::bce_residual, logits, labels);
}

NodeId Graph::softmax_ce(NodeId logits, NodeId labels) {
  const Shape& s = checked_matrix(logits, "softmax_ce");
  require_same_shape(logits, labels, "softmax_ce");
  Node n;
  n.op = Op::softmax_ce;
  n.inputs = {logits, labels};
  n.shape = {s[0], 1};
  return push(std::move(n));
}

NodeId Graph::softmax_ce_residual(NodeId logits, NodeId labels) {
  checked_matrix(logits, "softmax_ce_residual");
  return binary_elementwise(Op::softmax_ce_residual, logits, labels);
}

NodeId Graph::layer_norm(NodeId a, double tolerance) {
  const Shape& s = checked_matrix(a, "layer_norm");
  const std::size_t cols = s[1];
  const NodeId mean = scale(row_sum(a), 1.0 / static_cast<double>(cols));
  const NodeId centred = sub(a, broadcast_cols(mean, cols));
  const NodeId norm = row_norm(centred, tolerance);
  return div(centred, broadcast_cols(norm, cols));
}

// ---------------------------------------------------------------------------
// Reverse mode.

std::optional<NodeId> Graph::backward(NodeId id, std::size_t slot, NodeId g) {
  // Copy: the rules below append to nodes_.
  const Node n = nodes_[id];
  const NodeId a = n.inputs.empty() ? 0 : n.inputs[0];
  switch (n.op) {
    case Op::input:
    case Op::param:
    case Op::constant:
    case Op::step:
      return std::nullopt;
    case Op::add:
      return g;
    case Op::sub:
      return slot == 0 ? g : neg(g);
    case Op::mul:
      return mul(g, n.inputs[1 - slot]);
    case Op::div:
      if (slot == 0) return div(g, n.inputs[1]);
      return neg(div(mul(g, id), n.inputs[1]));
    case Op::neg:
      return neg(g);
    case Op::scale:
      return scale(g, n.scalar);
    case Op::add_scalar:
      return g;
    case Op::exp:
      return mul(g, id);
    case Op::log:
      return div(g, a);
    case Op::sqrt:
      return div(g, scale(id, 2.0));
    case Op::relu:
      return mul(g, step(a));
    case Op::sigmoid:
      return mul(g, mul(id, add_scalar(neg(id), 1.0)));
    case Op::tanh:
      return mul(g, add_scalar(neg(mul(id, id)), 1.0));
    case Op::softplus:
      return mul(g, sigmoid(a));
    case Op::softmax: {
      const std::size_t cols = n.shape[1];
      return mul(id, sub(g, broadcast_cols(row_sum(mul(g, id)), cols)));
    }
    case Op::matmul:
      if (slot == 0) return matmul(g, transpose(n.inputs[1]));
      return matmul(transpose(n.inputs[0]), g);
    case Op::transpose:
      return transpose(g);
    case Op::sum_all:
      return broadcast_scalar(g, nodes_[a].shape);
    case Op::row_sum:
      return broadcast_cols(g, nodes_[a].shape[1]);
    case Op::col_sum:
      return broadcast_rows(g, nodes_[a].shape[0]);
    case Op::broadcast_rows:
      return col_sum(g);
    case Op::broadcast_cols:
      return row_sum(g);
    case Op::broadcast_scalar: {
      NodeId total = sum_all(g);
      if (nodes_[a].shape != Shape{1}) total = reshape(total, nodes_[a].shape);
      return total;
    }
    case Op::concat_cols: {
      std::size_t offset = 0;
      for (std::size_t i = 0; i < slot; ++i) offset += nodes_[n.inputs[i]].shape[1];
      return slice_cols(g, offset, offset + nodes_[n.inputs[slot]].shape[1]);
    }
    case Op::slice_cols:
      return pad_cols(g, n.begin, nodes_[a].shape[1]);
    case Op::pad_cols:
      return slice_cols(g, n.begin, n.end);
    case Op::reshape:
      return reshape(g, nodes_[a].shape);
    case Op::mask_fill:
      return mask_fill(g, *n.value, 0.0);
    case Op::row_norm: {
      const std::size_t cols = nodes_[a].shape[1];
      return mul(broadcast_cols(div(g, id), cols), a);
    }
    case Op::bce:
      if (slot == 1) return std::nullopt;
      return mul(g, bce_residual(a, n.inputs[1]));
    case Op::bce_residual:
      if (slot == 1) return std::nullopt;
      return mul(g, mul(sigmoid(a), sigmoid(neg(a))));
    case Op::softmax_ce:
      if (slot == 1) return std::nullopt;
      return mul(broadcast_cols(g, nodes_[a].shape[1]), softmax_ce_residual(a, n.inputs[1]));
    case Op::softmax_ce_residual: {
      if (slot == 1) return std::nullopt;
      const NodeId s = softmax(a);
      const std::size_t cols = nodes_[a].shape[1];
      return mul(s, sub(g, broadcast_cols(row_sum(mul(g, s)), cols)));
    }
  }
  return std::nullopt;
}

std::vector<NodeId> Graph::gradients(NodeId output, std::span<const NodeId> wrt,
                                     std::optional<NodeId> seed) {
  const std::size_t limit = output + 1;
  if (output >= nodes_.size()) throw StructuralError("gradients: unknown output node");

  std::vector<char> relevant(limit, 0);
  for (NodeId w : wrt) {
    if (w < limit) relevant[w] = 1;
  }
  // Forward sweep: a node is relevant when some input is. Step nodes stop
  // gradients and are never relevant.
  for (NodeId i = 0; i < limit; ++i) {
    if (relevant[i] || nodes_[i].op == Op::step) continue;
    for (NodeId in : nodes_[i].inputs) {
      if (relevant[in]) {
        relevant[i] = 1;
        break;
      }
    }
  }

  std::vector<std::optional<NodeId>> adjoint(limit);
  if (seed) {
    if (nodes_.at(*seed).shape != nodes_[output].shape) {
      throw StructuralError("gradients: seed shape differs from " + describe(output));
    }
    adjoint[output] = *seed;
  } else {
    adjoint[output] = constant(Tensor(nodes_[output].shape, 1.0));
  }

  for (NodeId i = limit; i-- > 0;) {
    if (!adjoint[i] || !relevant[i]) continue;
    const std::vector<NodeId> ins = nodes_[i].inputs;
    for (std::size_t slot = 0; slot < ins.size(); ++slot) {
      const NodeId in = ins[slot];
      if (!relevant[in]) continue;
      std::optional<NodeId> contribution = backward(i, slot, *adjoint[i]);
      if (!contribution) continue;
      adjoint[in] = adjoint[in] ? add(*adjoint[in], *contribution) : *contribution;
    }
  }

  std::vector<NodeId> out;
  out.reserve(wrt.size());
  for (NodeId w : wrt) {
    if (w < limit && adjoint[w]) {
      out.push_back(*adjoint[w]);
    } else {
      out.push_back(constant(Tensor(nodes_.at(w).shape, 0.0)));
    }
  }
  return out;
}

}  // namespace normlab
