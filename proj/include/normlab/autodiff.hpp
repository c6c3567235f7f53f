#pragma once

// Gradients and Hessian-vector products of scalar graph outputs with respect
// to every parameter leaf, plus the central-difference oracle used to check
// them.

#include <functional>

#include "normlab/graph.hpp"

namespace normlab {

/// A scalar loss node with its gradient nodes appended once; evaluation can
/// then be repeated cheaply for different inputs and parameters.
class GradProgram {
 public:
  /// Throws ContractError when `loss` is not a single-element node.
  GradProgram(Graph graph, NodeId loss);

  struct Result {
    double value = 0.0;
    ParameterSet grad;
  };

  double value(const Inputs& inputs, const ParameterSet& params) const;
  /// Gradient groups follow `params`; groups the graph never reads get zeros.
  Result value_and_grad(const Inputs& inputs, const ParameterSet& params) const;

  const Graph& graph() const { return graph_; }
  NodeId loss() const { return loss_; }

 private:
  Graph graph_;
  NodeId loss_;
  std::vector<std::pair<std::string, NodeId>> grads_;
};

/// Hessian-vector products by differentiating v . grad L a second time.
class HvpProgram {
 public:
  HvpProgram(Graph graph, NodeId loss);

  struct Result {
    double value = 0.0;
    ParameterSet grad;
    ParameterSet hvp;
  };

  /// `v` must be conformant with `params`.
  Result apply(const Inputs& inputs, const ParameterSet& params, const ParameterSet& v) const;

 private:
  Graph graph_;
  NodeId loss_;
  std::vector<std::pair<std::string, NodeId>> grads_;
  std::vector<std::pair<std::string, NodeId>> hvps_;
};

ParameterSet grad(const Graph& graph, NodeId loss, const Inputs& inputs, const ParameterSet& params);

ParameterSet hvp(const Graph& graph, NodeId loss, const Inputs& inputs, const ParameterSet& params,
                 const ParameterSet& v);

using ScalarFunction = std::function<double(const ParameterSet&)>;

/// (f(theta + h e_i) - f(theta - h e_i)) / 2h for every coordinate.
ParameterSet finite_diff_grad(const ScalarFunction& f, const ParameterSet& params, double h);

/// max_i |a_i - b_i| / max(max_i |b_i|, floor): a relative error that does
/// not blow up on individual near-zero coordinates.
double relative_error(const ParameterSet& a, const ParameterSet& b, double floor = 1e-12);

}  // namespace normlab
