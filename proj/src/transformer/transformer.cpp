#include "normlab/transformer.hpp"

#include <cmath>
#include <limits>

#include "normlab/error.hpp"

namespace normlab::tf {

namespace {

std::string layer_prefix(std::size_t layer) { return "l" + std::to_string(layer); }

std::string head_prefix(std::size_t layer, std::size_t head) {
  return layer_prefix(layer) + ".h" + std::to_string(head);
}

Tensor causal_mask(std::size_t t) {
  Tensor m({t, t}, 0.0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j <= i; ++j) m.at(i, j) = 1.0;
  return m;
}

HeadNodes attend(Graph& g, NodeId q, NodeId k, NodeId v, bool causal) {
  const double dk = static_cast<double>(g.shape(q)[1]);
  NodeId s = g.scale(g.matmul(q, g.transpose(k)), 1.0 / std::sqrt(dk));
  if (causal) s = g.mask_fill(s, causal_mask(g.shape(q)[0]), -std::numeric_limits<double>::infinity());
  const NodeId a = g.softmax(s);
  return {g.matmul(a, v), a};
}

// x W (+ b), with W [in, out] and an optional [1, out] bias group.
NodeId linear(Graph& g, NodeId x, const std::string& name, std::size_t in, std::size_t out, bool bias) {
  NodeId y = g.matmul(x, g.param(name, {in, out}));
  if (bias) y = g.add(y, g.broadcast_rows(g.param(name + ".b", {1, out}), g.shape(x)[0]));
  return y;
}

NodeId normed(Graph& g, NodeId z, const TransformerConfig& cfg, const std::string& name) {
  const std::size_t rows = g.shape(z)[0];
  NodeId y = g.layer_norm(z, kSublayerNormTolerance);
  if (cfg.ln_gain) y = g.mul(y, g.broadcast_rows(g.param(name + ".g", {1, cfg.d_model}), rows));
  if (cfg.biases) y = g.add(y, g.broadcast_rows(g.param(name + ".b", {1, cfg.d_model}), rows));
  return y;
}

NodeId residual(Graph& g, NodeId z, NodeId x, const TransformerConfig& cfg, const std::string& ln) {
  if (cfg.norm_style == NormStyle::pre) return g.add(normed(g, z, cfg, ln), x);
  return normed(g, g.add(z, x), cfg, ln);
}

NodeId attention_sublayer(Graph& g, NodeId x, const TransformerConfig& cfg, std::size_t layer,
                          std::vector<HeadNodes>* heads) {
  const std::size_t d = cfg.d_model, dk = cfg.d_k();
  std::vector<NodeId> outs;
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const std::string p = head_prefix(layer, h);
    const NodeId q = linear(g, x, p + ".wq", d, dk, cfg.biases);
    const NodeId k = linear(g, x, p + ".wk", d, dk, cfg.biases);
    const NodeId v = linear(g, x, p + ".wv", d, dk, cfg.biases);
    const HeadNodes h_nodes = attend(g, q, k, v, cfg.causal_mask);
    g.set_label(h_nodes.attention, p + " attention");
    g.set_label(h_nodes.output, p + " output");
    if (heads) heads->push_back(h_nodes);
    outs.push_back(h_nodes.output);
  }
  const NodeId mixed = linear(g, g.concat_cols(outs), layer_prefix(layer) + ".wo", d, d, cfg.biases);
  const NodeId y = residual(g, mixed, x, cfg, layer_prefix(layer) + ".ln1");
  g.set_label(y, layer_prefix(layer) + " attention sublayer");
  return y;
}

NodeId feedforward_sublayer(Graph& g, NodeId x, const TransformerConfig& cfg, std::size_t layer) {
  const std::string p = layer_prefix(layer);
  const NodeId hidden = g.relu(linear(g, x, p + ".wi", cfg.d_model, cfg.d_ff, cfg.biases));
  const NodeId z = linear(g, hidden, p + ".wf", cfg.d_ff, cfg.d_model, cfg.biases);
  const NodeId y = residual(g, z, x, cfg, p + ".ln2");
  g.set_label(y, p + " feedforward sublayer");
  return y;
}

void add_weight(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, bool bias,
                Rng& rng) {
  ps.add(name, randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in))));
  if (bias) ps.add(name + ".b", Tensor({1, out}, 0.0));
}

void add_norm(ParameterSet& ps, const std::string& name, const TransformerConfig& cfg) {
  if (cfg.ln_gain) ps.add(name + ".g", Tensor({1, cfg.d_model}, 1.0));
  if (cfg.biases) ps.add(name + ".b", Tensor({1, cfg.d_model}, 0.0));
}

// Output of a single-node subgraph evaluated on X alone.
Tensor run_on(const Graph& g, NodeId out, const Tensor& x, const ParameterSet& params) {
  Inputs in;
  in.emplace("x", x);
  return eval_graph(g, out, in, params);
}

void check_model_input(const Tensor& x, const TransformerConfig& cfg) {
  if (x.rank() != 2 || x.cols() != cfg.d_model) {
    throw StructuralError("sublayer input has shape " + shape_string(x.shape()) + ", expected [T, " +
                          std::to_string(cfg.d_model) + "]");
  }
}

}  // namespace

std::string_view norm_style_name(NormStyle s) { return s == NormStyle::pre ? "pre" : "post"; }

void TransformerConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || d_ff == 0 || vocab_size == 0 || max_len == 0) {
    throw ValidationError("transformer sizes must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ValidationError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                          std::to_string(n_heads));
  }
  if (!(embedding_sd > 0.0 && std::isfinite(embedding_sd))) throw ValidationError("embedding_sd must be positive");
}

ParameterSet init_params(const TransformerConfig& cfg, Rng& rng) {
  cfg.validate();
  ParameterSet ps;
  ps.add("emb", randn({cfg.vocab_size, cfg.d_model}, rng, cfg.embedding_sd));
  if (cfg.positional) ps.add("pos", randn({cfg.max_len, cfg.d_model}, rng, cfg.embedding_sd));
  const std::size_t d = cfg.d_model, dk = cfg.d_k();
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      for (const char* w : {".wq", ".wk", ".wv"}) add_weight(ps, head_prefix(l, h) + w, d, dk, cfg.biases, rng);
    }
    add_weight(ps, layer_prefix(l) + ".wo", d, d, cfg.biases, rng);
    add_norm(ps, layer_prefix(l) + ".ln1", cfg);
    add_weight(ps, layer_prefix(l) + ".wi", d, cfg.d_ff, cfg.biases, rng);
    add_weight(ps, layer_prefix(l) + ".wf", cfg.d_ff, d, cfg.biases, rng);
    add_norm(ps, layer_prefix(l) + ".ln2", cfg);
  }
  return ps;
}

void add_classifier(ParameterSet& params, const TransformerConfig& cfg, std::size_t classes, Rng& rng) {
  if (classes == 0) throw ContractError("add_classifier: need at least one class");
  params.add("cls", randn({cfg.d_model, classes}, rng, 1.0 / std::sqrt(static_cast<double>(cfg.d_model))));
}

ParameterSet weight_groups(const ParameterSet& params) {
  return params.filtered([](const std::string& name, const Tensor& t) {
    return name != "emb" && name != "pos" && t.size() > 1;
  });
}

Tensor one_hot(std::span<const int> tokens, std::size_t vocab) {
  if (tokens.empty()) throw ContractError("one_hot: empty sequence");
  Tensor out({tokens.size(), vocab}, 0.0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int tok = tokens[i];
    if (tok < 0 || static_cast<std::size_t>(tok) >= vocab) {
      throw ContractError("token " + std::to_string(tok) + " at position " + std::to_string(i) +
                          " is outside the vocabulary of " + std::to_string(vocab));
    }
    out.at(i, static_cast<std::size_t>(tok)) = 1.0;
  }
  return out;
}

HeadNodes attention_head(Graph& g, NodeId x, NodeId wq, NodeId wk, NodeId wv, bool causal) {
  return attend(g, g.matmul(x, wq), g.matmul(x, wk), g.matmul(x, wv), causal);
}

EncoderNodes build_encoder(Graph& g, const TransformerConfig& cfg, std::size_t length, const std::string& input) {
  cfg.validate();
  if (length == 0 || length > cfg.max_len) {
    throw ContractError("sequence length " + std::to_string(length) + " outside [1, " +
                        std::to_string(cfg.max_len) + "]");
  }
  EncoderNodes en;
  en.input = input;
  en.length = length;
  const NodeId onehot = g.input(input, {length, cfg.vocab_size});
  NodeId x = g.matmul(onehot, g.param("emb", {cfg.vocab_size, cfg.d_model}));
  if (cfg.positional) {
    Tensor select({length, cfg.max_len}, 0.0);
    for (std::size_t i = 0; i < length; ++i) select.at(i, i) = 1.0;
    x = g.add(x, g.matmul(g.constant(std::move(select)), g.param("pos", {cfg.max_len, cfg.d_model})));
  }
  g.set_label(x, "embedding");
  en.embedding = x;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerNodes ln;
    x = attention_sublayer(g, x, cfg, l, &ln.heads);
    ln.attention_sublayer = x;
    x = feedforward_sublayer(g, x, cfg, l);
    ln.feedforward_sublayer = x;
    en.layers.push_back(std::move(ln));
  }
  en.output = x;
  return en;
}

NodeId classifier_logits(Graph& g, NodeId reps, std::size_t classes) {
  return g.matmul(reps, g.param("cls", {g.shape(reps)[1], classes}));
}

HeadResult self_attention_head(const Tensor& x, const Tensor& wk, const Tensor& wq, const Tensor& wv,
                               bool causal) {
  if (x.rank() != 2) throw StructuralError("self_attention_head: X must be a matrix");
  for (const Tensor* w : {&wk, &wq, &wv}) {
    if (w->rank() != 2 || w->rows() != x.cols() || w->shape() != wq.shape()) {
      throw StructuralError("self_attention_head: weight shape " + shape_string(w->shape()) +
                            " does not fit X " + shape_string(x.shape()));
    }
  }
  Graph g;
  const HeadNodes h = attention_head(g, g.input("x", x.shape()), g.param("wq", wq.shape()),
                                     g.param("wk", wk.shape()), g.param("wv", wv.shape()), causal);
  ParameterSet ps;
  ps.add("wq", wq);
  ps.add("wk", wk);
  ps.add("wv", wv);
  Inputs in;
  in.emplace("x", x);
  const NodeId outs[] = {h.output, h.attention};
  const Evaluation ev = evaluate(g, outs, in, ps);
  return {ev[h.output], ev[h.attention]};
}

Tensor multi_head_sublayer(const Tensor& x, const ParameterSet& params, const TransformerConfig& cfg,
                           std::size_t layer) {
  check_model_input(x, cfg);
  Graph g;
  const NodeId y = attention_sublayer(g, g.input("x", x.shape()), cfg, layer, nullptr);
  return run_on(g, y, x, params);
}

Tensor feedforward_sublayer(const Tensor& x, const ParameterSet& params, const TransformerConfig& cfg,
                            std::size_t layer) {
  check_model_input(x, cfg);
  Graph g;
  const NodeId y = feedforward_sublayer(g, g.input("x", x.shape()), cfg, layer);
  return run_on(g, y, x, params);
}

Tensor classifier_logits(const Tensor& reps, const Tensor& cls) {
  Graph g;
  const NodeId y = g.matmul(g.input("x", reps.shape()), g.param("cls", cls.shape()));
  ParameterSet ps;
  ps.add("cls", cls);
  return run_on(g, y, reps, ps);
}

EncoderProgram::EncoderProgram(TransformerConfig cfg, std::size_t length) : cfg_(std::move(cfg)) {
  nodes_ = build_encoder(graph_, cfg_, length);
  outputs_.push_back(nodes_.embedding);
  for (const auto& l : nodes_.layers) {
    outputs_.push_back(l.attention_sublayer);
    outputs_.push_back(l.feedforward_sublayer);
    for (const auto& h : l.heads) {
      outputs_.push_back(h.attention);
      outputs_.push_back(h.output);
    }
  }
}

Encoding EncoderProgram::run(std::span<const int> tokens, const ParameterSet& params) const {
  if (tokens.size() != nodes_.length) {
    throw ContractError("encoder built for length " + std::to_string(nodes_.length) + ", got " +
                        std::to_string(tokens.size()));
  }
  Inputs in;
  in.emplace(nodes_.input, one_hot(tokens, cfg_.vocab_size));
  const Evaluation ev = evaluate(graph_, outputs_, in, params);
  Encoding out;
  out.embedding = ev[nodes_.embedding];
  for (const auto& l : nodes_.layers) {
    out.sublayers.push_back(ev[l.attention_sublayer]);
    out.sublayers.push_back(ev[l.feedforward_sublayer]);
    auto& att = out.attention.emplace_back();
    auto& heads = out.heads.emplace_back();
    for (const auto& h : l.heads) {
      att.push_back(ev[h.attention]);
      heads.push_back(ev[h.output]);
    }
  }
  out.output = out.sublayers.back();
  return out;
}

Tensor EncoderProgram::output(std::span<const int> tokens, const ParameterSet& params) const {
  if (tokens.size() != nodes_.length) {
    throw ContractError("encoder built for length " + std::to_string(nodes_.length) + ", got " +
                        std::to_string(tokens.size()));
  }
  Inputs in;
  in.emplace(nodes_.input, one_hot(tokens, cfg_.vocab_size));
  return eval_graph(graph_, nodes_.output, in, params);
}

Encoding encode(std::span<const int> tokens, const ParameterSet& params, const TransformerConfig& cfg) {
  if (tokens.empty()) throw ContractError("encode: empty sequence");
  return EncoderProgram(cfg, tokens.size()).run(tokens, params);
}

homog::NetGraph to_netgraph(const TransformerConfig& cfg, bool with_classifier) {
  using homog::NetNode;
  using homog::NodeKind;
  cfg.validate();
  homog::NetGraph net;
  int next = 0;
  auto add = [&](NodeKind kind, std::vector<int> inputs, std::string group = {}, std::size_t dim = 0) {
    const int id = next++;
    net.add(NetNode{id, kind, std::move(inputs), std::move(group), dim, 1.0});
    return id;
  };
  auto lin = [&](int x, const std::string& name, std::size_t dim) {
    int y = add(NodeKind::Linear, {x}, name, dim);
    if (cfg.biases) y = add(NodeKind::Bias, {y}, name + ".b");
    return y;
  };
  auto norm = [&](int z, const std::string& name) {
    if (cfg.biases) return add(NodeKind::Affine, {add(NodeKind::LayerNorm, {z})}, name);
    if (cfg.ln_gain) return add(NodeKind::LayerNormAffine, {z}, name + ".g");
    return add(NodeKind::LayerNorm, {z});
  };
  auto res = [&](int z, int x, const std::string& name) {
    if (cfg.norm_style == NormStyle::pre) return add(NodeKind::Sum, {norm(z, name), x});
    return norm(add(NodeKind::Sum, {z, x}), name);
  };

  const int tokens = add(NodeKind::Input, {}, "x", cfg.vocab_size);
  int x = add(NodeKind::Linear, {tokens}, "emb", cfg.d_model);
  if (cfg.positional) x = add(NodeKind::Sum, {x, add(NodeKind::Parameter, {}, "pos", cfg.d_model)});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    int mixed = -1;
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const std::string p = head_prefix(l, h);
      const int q = lin(x, p + ".wq", cfg.d_k());
      const int k = lin(x, p + ".wk", cfg.d_k());
      const int v = lin(x, p + ".wv", cfg.d_k());
      const int a = add(NodeKind::Softmax, {add(NodeKind::Product, {q, k})});
      const int o = add(NodeKind::Product, {a, v});
      mixed = mixed < 0 ? o : add(NodeKind::Concat, {mixed, o});
    }
    x = res(lin(mixed, layer_prefix(l) + ".wo", cfg.d_model), x, layer_prefix(l) + ".ln1");
    const int hidden = add(NodeKind::ReLU, {lin(x, layer_prefix(l) + ".wi", cfg.d_ff)});
    x = res(lin(hidden, layer_prefix(l) + ".wf", cfg.d_model), x, layer_prefix(l) + ".ln2");
  }
  if (with_classifier) add(NodeKind::Linear, {x}, "cls", cfg.vocab_size);
  return net;
}

GradProgram LmObjective::build(const TransformerConfig& cfg, std::size_t batch, std::size_t length,
                               std::size_t classes, std::vector<NodeId>& logits) {
  if (batch == 0) throw ContractError("LmObjective: empty batch");
  Graph g;
  NodeId total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const EncoderNodes en = build_encoder(g, cfg, length, "x." + std::to_string(b));
    const NodeId z = classifier_logits(g, en.output, classes);
    logits.push_back(z);
    const NodeId ce = g.sum_all(g.softmax_ce(z, g.input("y." + std::to_string(b), {length, classes})));
    total = b == 0 ? ce : g.add(total, ce);
  }
  const NodeId loss = g.scale(total, 1.0 / static_cast<double>(batch * length));
  g.set_label(loss, "lm loss");
  return GradProgram(std::move(g), loss);
}

LmObjective::LmObjective(const TransformerConfig& cfg, std::size_t batch, std::size_t length,
                         std::size_t classes)
    : cfg_(cfg),
      batch_(batch),
      length_(length),
      classes_(classes),
      program_(build(cfg, batch, length, classes, logits_)) {}

Inputs LmObjective::bind(const Batch& b) const {
  if (b.inputs.size() != batch_ || b.targets.size() != batch_) {
    throw ContractError("batch has " + std::to_string(b.inputs.size()) + " sequences, objective expects " +
                        std::to_string(batch_));
  }
  Inputs in;
  for (std::size_t i = 0; i < batch_; ++i) {
    if (b.inputs[i].size() != length_ || b.targets[i].size() != length_) {
      throw ContractError("sequence " + std::to_string(i) + " does not have length " + std::to_string(length_));
    }
    in.emplace("x." + std::to_string(i), one_hot(b.inputs[i], cfg_.vocab_size));
    in.emplace("y." + std::to_string(i), one_hot(b.targets[i], classes_));
  }
  return in;
}

Tensor LmObjective::logits(const Batch& b, const ParameterSet& params) const {
  const Evaluation ev = evaluate(program_.graph(), logits_, bind(b), params);
  Tensor out({batch_ * length_, classes_}, 0.0);
  for (std::size_t i = 0; i < batch_; ++i) {
    const Tensor& z = ev[logits_[i]];
    std::copy(z.data().begin(), z.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * z.size()));
  }
  return out;
}

double LmObjective::accuracy(const Batch& b, const ParameterSet& params) const {
  const Tensor z = logits(b, params);
  std::size_t hit = 0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes_; ++c)
      if (z.at(r, c) > z.at(r, best)) best = c;
    if (static_cast<int>(best) == b.targets[r / length_][r % length_]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(z.rows());
}

}  // namespace normlab::tf
