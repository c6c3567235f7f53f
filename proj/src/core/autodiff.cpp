#include "normlab/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "normlab/error.hpp"

namespace normlab {

namespace {

constexpr std::string_view kDirectionPrefix = "hvp.v:";

void require_scalar(const Graph& g, NodeId loss) {
  if (loss >= g.size()) throw StructuralError("unknown loss node " + std::to_string(loss));
  if (shape_size(g.shape(loss)) != 1) {
    throw ContractError("gradient of non-scalar output " + g.describe(loss) + " with shape " +
                        shape_string(g.shape(loss)));
  }
}

std::vector<std::pair<std::string, NodeId>> append_gradients(Graph& g, NodeId loss) {
  std::vector<NodeId> wrt;
  for (const auto& p : g.params()) wrt.push_back(p.second);
  const std::vector<NodeId> nodes = g.gradients(loss, wrt);
  std::vector<std::pair<std::string, NodeId>> out;
  for (std::size_t i = 0; i < wrt.size(); ++i) out.emplace_back(g.params()[i].first, nodes[i]);
  return out;
}

ParameterSet collect(const Evaluation& ev,
                     const std::vector<std::pair<std::string, NodeId>>& nodes,
                     const ParameterSet& layout) {
  ParameterSet out;
  for (const auto& [name, value] : layout.groups()) {
    auto it = std::find_if(nodes.begin(), nodes.end(), [&](const auto& p) { return p.first == name; });
    if (it == nodes.end()) {
      out.add(name, Tensor(value.shape(), 0.0));
    } else {
      out.add(name, ev[it->second]);
    }
  }
  return out;
}

std::vector<NodeId> node_list(NodeId first, const std::vector<std::pair<std::string, NodeId>>& a,
                              const std::vector<std::pair<std::string, NodeId>>* b = nullptr) {
  std::vector<NodeId> out{first};
  for (const auto& p : a) out.push_back(p.second);
  if (b) {
    for (const auto& p : *b) out.push_back(p.second);
  }
  return out;
}

}  // namespace

GradProgram::GradProgram(Graph graph, NodeId loss) : graph_(std::move(graph)), loss_(loss) {
  require_scalar(graph_, loss_);
  grads_ = append_gradients(graph_, loss_);
}

double GradProgram::value(const Inputs& inputs, const ParameterSet& params) const {
  return eval_graph(graph_, loss_, inputs, params).item();
}

GradProgram::Result GradProgram::value_and_grad(const Inputs& inputs, const ParameterSet& params) const {
  const std::vector<NodeId> outs = node_list(loss_, grads_);
  const Evaluation ev = evaluate(graph_, outs, inputs, params);
  return {ev[loss_].item(), collect(ev, grads_, params)};
}

HvpProgram::HvpProgram(Graph graph, NodeId loss) : graph_(std::move(graph)), loss_(loss) {
  require_scalar(graph_, loss_);
  grads_ = append_gradients(graph_, loss_);
  std::optional<NodeId> directional;
  for (const auto& [name, g] : grads_) {
    const NodeId v = graph_.input(std::string(kDirectionPrefix) + name, graph_.shape(g));
    const NodeId term = graph_.dot(g, v);
    directional = directional ? graph_.add(*directional, term) : term;
  }
  if (!directional) return;
  std::vector<NodeId> wrt;
  for (const auto& p : grads_) wrt.push_back(graph_.find_param(p.first).value());
  const std::vector<NodeId> second = graph_.gradients(*directional, wrt);
  for (std::size_t i = 0; i < wrt.size(); ++i) hvps_.emplace_back(grads_[i].first, second[i]);
}

HvpProgram::Result HvpProgram::apply(const Inputs& inputs, const ParameterSet& params,
                                     const ParameterSet& v) const {
  if (v.group_count() != params.group_count()) {
    throw StructuralError("hvp: direction is not conformant with the parameters");
  }
  Inputs bound = inputs;
  for (const auto& [name, g] : grads_) {
    const Tensor& dir = v.get(name);
    if (dir.shape() != params.get(name).shape()) {
      throw StructuralError("hvp: direction group '" + name + "' has the wrong shape");
    }
    bound.insert_or_assign(std::string(kDirectionPrefix) + name, dir);
  }
  const std::vector<NodeId> outs = node_list(loss_, grads_, &hvps_);
  const Evaluation ev = evaluate(graph_, outs, bound, params);
  return {ev[loss_].item(), collect(ev, grads_, params), collect(ev, hvps_, params)};
}

ParameterSet grad(const Graph& graph, NodeId loss, const Inputs& inputs, const ParameterSet& params) {
  return GradProgram(graph, loss).value_and_grad(inputs, params).grad;
}

ParameterSet hvp(const Graph& graph, NodeId loss, const Inputs& inputs, const ParameterSet& params,
                 const ParameterSet& v) {
  return HvpProgram(graph, loss).apply(inputs, params, v).hvp;
}

ParameterSet finite_diff_grad(const ScalarFunction& f, const ParameterSet& params, double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
  std::vector<double> flat = params.flatten();
  std::vector<double> out(flat.size(), 0.0);
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double saved = flat[i];
    flat[i] = saved + h;
    const double up = f(params.unflatten(flat));
    flat[i] = saved - h;
    const double down = f(params.unflatten(flat));
    flat[i] = saved;
    out[i] = (up - down) / (2.0 * h);
  }
  return params.unflatten(out);
}

double relative_error(const ParameterSet& a, const ParameterSet& b, double floor) {
  const std::vector<double> x = a.flatten();
  const std::vector<double> y = b.flatten();
  if (x.size() != y.size()) throw StructuralError("relative_error of differently sized sets");
  double diff = 0.0, scale = floor;
  for (std::size_t i = 0; i < x.size(); ++i) {
    diff = std::max(diff, std::abs(x[i] - y[i]));
    scale = std::max(scale, std::abs(y[i]));
  }
  return diff / scale;
}

}  // namespace normlab
