#pragma once

// Networks as typed DAGs, static propagation of (approximate) homogeneity
// degrees in the parameters, and empirical probes of the same property.

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "normlab/autodiff.hpp"
#include "normlab/functional.hpp"
#include "normlab/random.hpp"

namespace normlab::homog {

enum class NodeKind {
  Input,
  Parameter,
  Linear,
  Bias,
  Affine,
  ReLU,
  Sum,
  Product,
  Concat,
  LayerNorm,
  LayerNormAffine,
  Sigmoid,
  Tanh,
  Softmax,
  ScalarScale,
};

std::string_view kind_name(NodeKind kind);
std::optional<NodeKind> parse_kind(std::string_view name);
/// Number of inputs a node of this kind takes.
std::size_t arity(NodeKind kind);

enum class DegreeTag { exact, approx, undefined };

struct Degree {
  DegreeTag tag = DegreeTag::undefined;
  int k = 0;
  std::optional<double> fitted_decay;
  std::optional<double> fitted_threshold;

  static Degree exact(int k) { return {DegreeTag::exact, k, {}, {}}; }
  static Degree approx(int k) { return {DegreeTag::approx, k, {}, {}}; }
  static Degree undefined() { return {}; }

  bool defined() const { return tag != DegreeTag::undefined; }
  /// Compares tag and k only.
  bool operator==(const Degree& o) const { return tag == o.tag && (tag == DegreeTag::undefined || k == o.k); }
};

std::string to_string(const Degree& d);
std::ostream& operator<<(std::ostream& os, const Degree& d);

struct NetNode {
  int id = 0;
  NodeKind kind = NodeKind::Input;
  std::vector<int> inputs;
  /// Parameter group (or input name for Input nodes). Empty when unassigned.
  std::string group;
  /// Output width for Input, Parameter, Linear and Affine; 0 = same as input.
  std::size_t dim = 0;
  /// Constant factor of a ScalarScale node.
  double scale = 1.0;
};

/// Acyclic by construction: every input must name an earlier node.
class NetGraph {
 public:
  /// Appends a node, checking arity, id uniqueness and input references.
  void add(NetNode node);

  const std::vector<NetNode>& nodes() const { return nodes_; }
  const NetNode& node(int id) const;
  bool contains(int id) const { return index_.contains(id); }
  /// Id of the last node, taken as the network output.
  int output() const;

  /// Line format: `<id> <Kind> [input ids...] [@group] [dim=N] [scale=X]`.
  /// `#` starts a comment. Malformed lines raise StructuralError with the
  /// line number.
  static NetGraph parse(std::string_view text);
  std::string to_text() const;

 private:
  std::vector<NetNode> nodes_;
  std::map<int, std::size_t> index_;
};

/// Degree of every node under the closure rules. Throws ContractError for a
/// Parameter leaf without a group.
std::map<int, Degree> propagate_homogeneity(const NetGraph& g);

/// JSON array of {"node", "kind", "tag", "k"} records in node order.
std::string verdicts_json(const NetGraph& g, const std::map<int, Degree>& verdicts);

// ---------------------------------------------------------------------------
// Executing a NetGraph. Values are [batch, width] matrices; Linear is x W
// with W of shape [in, out]; Parameter leaves are single rows broadcast over
// the batch.

struct CompiledNet {
  Graph graph;
  NodeId output = 0;
  std::map<int, NodeId> nodes;
  /// Input node names, as bound in Inputs.
  std::vector<std::string> inputs;
  /// Parameter groups that are layer-norm gains.
  std::vector<std::string> gains;
};

CompiledNet compile(const NetGraph& g, std::size_t batch);

/// Parameter groups of a compiled net with the default initialisation:
/// weights N(0, 1/fan_in), biases and Parameter leaves N(0, 1/width), gains 1.
ParameterSet init_params(const CompiledNet& net, Rng& rng);

// ---------------------------------------------------------------------------
// Empirical probes.

using VectorFunction = std::function<Tensor(const ParameterSet&)>;

/// k_hat = log(||f(c theta)|| / ||f(theta)||) / log c. Throws ContractError
/// for c <= 1 and DegenerateError when f(theta) is zero.
double estimate_degree_empirical(const VectorFunction& f, const ParameterSet& theta, double c);

struct ScalingErrorPoint {
  double norm = 0.0;
  double error = 0.0;
  bool clipped = false;
};

struct ScalingErrorCurve {
  std::vector<ScalingErrorPoint> points;
  /// Least-squares slope of log(error) against ||theta|| over the upper half
  /// of the grid; decay = -slope.
  double slope = 0.0;
  double decay = 0.0;
  double r2 = 0.0;
  bool any_clipped = false;
};

inline constexpr double kErrorFloor = 1e-300;

/// max_i |f(c theta)_i - c^k f(theta)_i| at theta = norm * direction/||direction||
/// for each norm in the (increasing) grid.
ScalingErrorCurve scaling_error_curve(const VectorFunction& f, const ParameterSet& direction, int k,
                                      double c, const std::vector<double>& norm_grid);

using ValueGradFunction = std::function<GradProgram::Result(const ParameterSet&)>;

/// |theta . grad f - k f| / (1 + |k f|) for scalar f.
double euler_residual(const ValueGradFunction& f, const ParameterSet& theta, int k);

struct ScalingBound {
  double error = 0.0;
  double bound = 0.0;
  /// Every element's error is within its own bound.
  bool holds = true;
};

/// Measured max_i |act(c x)_i - act(x)_i| and the largest closed-form bound:
/// 1/(exp|x_i| + 1) for sigmoid, 2/(exp(2|x_i|) + 1) for tanh, and
/// 1 - max softmax(x) for softmax over the whole vector. Throws
/// ContractError when c <= 1 or for relu.
ScalingBound activation_scaling_bound(Activation kind, const Tensor& x, double c);

}  // namespace normlab::homog
