#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "normlab/error.hpp"
#include "normlab/homogeneity.hpp"

namespace normlab::homog {

namespace {

struct KindInfo {
  NodeKind kind;
  std::string_view name;
  std::size_t arity;
};

constexpr KindInfo kKinds[] = {
    {NodeKind::Input, "Input", 0},         {NodeKind::Parameter, "Parameter", 0},
    {NodeKind::Linear, "Linear", 1},       {NodeKind::Bias, "Bias", 1},
    {NodeKind::Affine, "Affine", 1},       {NodeKind::ReLU, "ReLU", 1},
    {NodeKind::Sum, "Sum", 2},             {NodeKind::Product, "Product", 2},
    {NodeKind::Concat, "Concat", 2},       {NodeKind::LayerNorm, "LayerNorm", 1},
    {NodeKind::LayerNormAffine, "LayerNormAffine", 1},
    {NodeKind::Sigmoid, "Sigmoid", 1},     {NodeKind::Tanh, "Tanh", 1},
    {NodeKind::Softmax, "Softmax", 1},     {NodeKind::ScalarScale, "ScalarScale", 1},
};

const KindInfo& info(NodeKind kind) {
  for (const auto& k : kKinds) {
    if (k.kind == kind) return k;
  }
  throw StructuralError("unknown node kind");
}

bool needs_group(NodeKind kind) {
  switch (kind) {
    case NodeKind::Parameter:
    case NodeKind::Linear:
    case NodeKind::Bias:
    case NodeKind::Affine:
    case NodeKind::LayerNormAffine:
      return true;
    default:
      return false;
  }
}

Degree with_tag(DegreeTag tag, int k) { return tag == DegreeTag::exact ? Degree::exact(k) : Degree::approx(k); }

DegreeTag join(DegreeTag a, DegreeTag b) {
  if (a == DegreeTag::undefined || b == DegreeTag::undefined) return DegreeTag::undefined;
  if (a == DegreeTag::approx || b == DegreeTag::approx) return DegreeTag::approx;
  return DegreeTag::exact;
}

Degree rule(NodeKind kind, const std::vector<Degree>& in) {
  switch (kind) {
    case NodeKind::Input:
      return Degree::exact(0);
    case NodeKind::Parameter:
      return Degree::exact(1);
    default:
      break;
  }
  const Degree& a = in[0];
  if (kind == NodeKind::Sum || kind == NodeKind::Product || kind == NodeKind::Concat) {
    const Degree& b = in[1];
    const DegreeTag tag = join(a.tag, b.tag);
    if (tag == DegreeTag::undefined) return Degree::undefined();
    if (kind == NodeKind::Product) return with_tag(tag, a.k + b.k);
    return a.k == b.k ? with_tag(tag, a.k) : Degree::undefined();
  }
  if (!a.defined()) return Degree::undefined();
  switch (kind) {
    case NodeKind::Linear:
      return with_tag(a.tag, a.k + 1);
    case NodeKind::Bias:
      return a.k == 1 ? with_tag(a.tag, 1) : Degree::undefined();
    case NodeKind::Affine:
      return a.k == 0 ? with_tag(a.tag, 1) : Degree::undefined();
    case NodeKind::LayerNorm:
      return with_tag(a.tag, 0);
    case NodeKind::LayerNormAffine:
      return with_tag(a.tag, 1);
    case NodeKind::ReLU:
    case NodeKind::ScalarScale:
      return a;
    case NodeKind::Sigmoid:
    case NodeKind::Tanh:
    case NodeKind::Softmax:
      return a.k == 0 ? with_tag(a.tag, 0) : Degree::approx(0);
    default:
      break;
  }
  throw StructuralError("no homogeneity rule for " + std::string(kind_name(kind)));
}

}  // namespace

std::string_view kind_name(NodeKind kind) { return info(kind).name; }

std::optional<NodeKind> parse_kind(std::string_view name) {
  for (const auto& k : kKinds) {
    if (k.name == name) return k.kind;
  }
  return std::nullopt;
}

std::size_t arity(NodeKind kind) { return info(kind).arity; }

std::string to_string(const Degree& d) {
  switch (d.tag) {
    case DegreeTag::exact: return "Exact(" + std::to_string(d.k) + ")";
    case DegreeTag::approx: return "Approx(" + std::to_string(d.k) + ")";
    case DegreeTag::undefined: return "Undefined";
  }
  return "?";
}

std::ostream& operator<<(std::ostream& os, const Degree& d) { return os << to_string(d); }

void NetGraph::add(NetNode node) {
  if (index_.contains(node.id)) throw StructuralError("duplicate node id " + std::to_string(node.id));
  if (node.inputs.size() != arity(node.kind)) {
    throw StructuralError("node " + std::to_string(node.id) + " (" + std::string(kind_name(node.kind)) +
                          ") takes " + std::to_string(arity(node.kind)) + " inputs, got " +
                          std::to_string(node.inputs.size()));
  }
  for (int in : node.inputs) {
    if (!index_.contains(in)) {
      throw StructuralError("node " + std::to_string(node.id) + " refers to undefined node " +
                            std::to_string(in) + " (inputs must be declared first)");
    }
  }
  index_.emplace(node.id, nodes_.size());
  nodes_.push_back(std::move(node));
}

const NetNode& NetGraph::node(int id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw StructuralError("no node with id " + std::to_string(id));
  return nodes_[it->second];
}

int NetGraph::output() const {
  if (nodes_.empty()) throw StructuralError("empty network graph");
  return nodes_.back().id;
}

NetGraph NetGraph::parse(std::string_view text) {
  NetGraph g;
  std::istringstream lines{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream words(line);
    std::vector<std::string> tok;
    for (std::string w; words >> w;) tok.push_back(w);
    if (tok.empty()) continue;
    const auto fail = [&](const std::string& why) {
      throw StructuralError("line " + std::to_string(lineno) + ": " + why);
    };
    if (tok.size() < 2) fail("expected '<id> <Kind> ...'");
    NetNode n;
    try {
      std::size_t used = 0;
      n.id = std::stoi(tok[0], &used);
      if (used != tok[0].size()) fail("bad node id '" + tok[0] + "'");
    } catch (const std::logic_error&) {
      fail("bad node id '" + tok[0] + "'");
    }
    auto kind = parse_kind(tok[1]);
    if (!kind) fail("unknown node kind '" + tok[1] + "'");
    n.kind = *kind;
    for (std::size_t i = 2; i < tok.size(); ++i) {
      const std::string& t = tok[i];
      try {
        if (t[0] == '@') {
          n.group = t.substr(1);
          if (n.group.empty()) fail("empty group name");
        } else if (t.rfind("dim=", 0) == 0) {
          const long v = std::stol(t.substr(4));
          if (v <= 0) fail("dim must be positive");
          n.dim = static_cast<std::size_t>(v);
        } else if (t.rfind("scale=", 0) == 0) {
          n.scale = std::stod(t.substr(6));
        } else {
          std::size_t used = 0;
          const int in = std::stoi(t, &used);
          if (used != t.size()) fail("unexpected token '" + t + "'");
          n.inputs.push_back(in);
        }
      } catch (const std::logic_error&) {
        fail("unexpected token '" + t + "'");
      }
    }
    try {
      g.add(std::move(n));
    } catch (const StructuralError& e) {
      fail(e.what());
    }
  }
  return g;
}

std::string NetGraph::to_text() const {
  std::ostringstream os;
  for (const auto& n : nodes_) {
    os << n.id << ' ' << kind_name(n.kind);
    for (int in : n.inputs) os << ' ' << in;
    if (!n.group.empty()) os << " @" << n.group;
    if (n.dim) os << " dim=" << n.dim;
    if (n.kind == NodeKind::ScalarScale) os << " scale=" << n.scale;
    os << '\n';
  }
  return os.str();
}

std::map<int, Degree> propagate_homogeneity(const NetGraph& g) {
  std::map<int, Degree> out;
  for (const auto& n : g.nodes()) {
    if (n.kind == NodeKind::Parameter && n.group.empty()) {
      throw ContractError("unassigned leaf: parameter node " + std::to_string(n.id) +
                          " has no parameter group");
    }
    std::vector<Degree> in;
    for (int i : n.inputs) in.push_back(out.at(i));
    out.emplace(n.id, rule(n.kind, in));
  }
  return out;
}

std::string verdicts_json(const NetGraph& g, const std::map<int, Degree>& verdicts) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& n : g.nodes()) {
    const Degree& d = verdicts.at(n.id);
    nlohmann::ordered_json rec;
    rec["node"] = n.id;
    rec["kind"] = kind_name(n.kind);
    rec["tag"] = d.tag == DegreeTag::exact ? "Exact" : d.tag == DegreeTag::approx ? "Approx" : "Undefined";
    if (d.defined()) {
      rec["k"] = d.k;
    } else {
      rec["k"] = nullptr;
    }
    if (d.fitted_decay) rec["d"] = *d.fitted_decay;
    if (d.fitted_threshold) rec["rho"] = *d.fitted_threshold;
    arr.push_back(std::move(rec));
  }
  return arr.dump(2);
}

// ---------------------------------------------------------------------------

CompiledNet compile(const NetGraph& net, std::size_t batch) {
  if (batch == 0) throw ContractError("compile: batch must be positive");
  CompiledNet out;
  Graph& g = out.graph;
  const auto width = [&](NodeId id) { return g.shape(id)[1]; };
  const auto group_of = [](const NetNode& n) {
    if (needs_group(n.kind) && n.group.empty()) {
      throw ContractError("unassigned leaf: node " + std::to_string(n.id) + " (" +
                          std::string(kind_name(n.kind)) + ") has no parameter group");
    }
    return n.group;
  };
  for (const auto& n : net.nodes()) {
    std::vector<NodeId> in;
    for (int i : n.inputs) in.push_back(out.nodes.at(i));
    NodeId id = 0;
    switch (n.kind) {
      case NodeKind::Input: {
        if (n.dim == 0) throw StructuralError("input node " + std::to_string(n.id) + " needs dim=");
        const std::string name = n.group.empty() ? "x" : n.group;
        id = g.input(name, {batch, n.dim});
        if (std::find(out.inputs.begin(), out.inputs.end(), name) == out.inputs.end()) {
          out.inputs.push_back(name);
        }
        break;
      }
      case NodeKind::Parameter: {
        if (n.dim == 0) throw StructuralError("parameter node " + std::to_string(n.id) + " needs dim=");
        id = g.broadcast_rows(g.param(group_of(n), {1, n.dim}), batch);
        break;
      }
      case NodeKind::Linear: {
        const std::size_t w = width(in[0]);
        id = g.matmul(in[0], g.param(group_of(n), {w, n.dim ? n.dim : w}));
        break;
      }
      case NodeKind::Bias: {
        const std::size_t w = width(in[0]);
        id = g.add(in[0], g.broadcast_rows(g.param(group_of(n), {1, w}), batch));
        break;
      }
      case NodeKind::Affine: {
        const std::size_t w = width(in[0]);
        const std::size_t o = n.dim ? n.dim : w;
        const std::string grp = group_of(n);
        id = g.add(g.matmul(in[0], g.param(grp + ".w", {w, o})),
                   g.broadcast_rows(g.param(grp + ".b", {1, o}), batch));
        break;
      }
      case NodeKind::ReLU:
        id = g.relu(in[0]);
        break;
      case NodeKind::Sum:
        id = g.add(in[0], in[1]);
        break;
      case NodeKind::Product:
        id = g.mul(in[0], in[1]);
        break;
      case NodeKind::Concat:
        id = g.concat_cols(in);
        break;
      case NodeKind::LayerNorm:
        id = g.layer_norm(in[0], kLayerNormTolerance);
        break;
      case NodeKind::LayerNormAffine: {
        const std::size_t w = width(in[0]);
        const std::string grp = group_of(n);
        id = g.mul(g.layer_norm(in[0], kLayerNormTolerance), g.broadcast_rows(g.param(grp, {1, w}), batch));
        out.gains.push_back(grp);
        break;
      }
      case NodeKind::Sigmoid:
        id = g.sigmoid(in[0]);
        break;
      case NodeKind::Tanh:
        id = g.tanh(in[0]);
        break;
      case NodeKind::Softmax:
        id = g.softmax(in[0]);
        break;
      case NodeKind::ScalarScale:
        id = g.scale(in[0], n.scale);
        break;
    }
    g.set_label(id, "net node " + std::to_string(n.id));
    out.nodes.emplace(n.id, id);
  }
  out.output = out.nodes.at(net.output());
  return out;
}

ParameterSet init_params(const CompiledNet& net, Rng& rng) {
  ParameterSet p;
  for (const auto& [name, id] : net.graph.params()) {
    const Shape& s = net.graph.shape(id);
    const bool gain = std::find(net.gains.begin(), net.gains.end(), name) != net.gains.end();
    if (gain) {
      p.add(name, Tensor(s, 1.0));
    } else if (s[0] == 1) {
      p.add(name, randn(s, rng, 1.0 / std::sqrt(static_cast<double>(s[1]))));
    } else {
      p.add(name, randn(s, rng, 1.0 / std::sqrt(static_cast<double>(s[0]))));
    }
  }
  return p;
}

}  // namespace normlab::homog
