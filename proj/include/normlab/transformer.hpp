#pragma once

// Biasless transformer encoder in pre-norm (lnorm(sublayer(X)) + X) and
// post-norm (lnorm(sublayer(X) + X)) form, built as graph nodes so that the
// same definition serves forward analysis, training and degree checks.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "normlab/graph.hpp"
#include "normlab/homogeneity.hpp"
#include "normlab/random.hpp"

namespace normlab::tf {

enum class NormStyle { pre, post };

std::string_view norm_style_name(NormStyle s);

struct TransformerConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_model = 32;
  std::size_t d_ff = 32;
  std::size_t vocab_size = 64;
  std::size_t max_len = 32;
  NormStyle norm_style = NormStyle::pre;
  bool biases = false;
  bool causal_mask = true;
  /// Learned elementwise gain after every layer norm.
  bool ln_gain = true;
  /// Learned positional embedding added to the token embedding.
  bool positional = false;
  /// Standard deviation of the embedding (and positional) initialisation.
  double embedding_sd = 1.0;

  std::size_t d_k() const { return d_model / n_heads; }
  /// Throws ValidationError for zero sizes or d_model not divisible by n_heads.
  void validate() const;
};

/// Layer-norm tolerance used by every sublayer: rows whose centred norm is at
/// or below it raise DegenerateError.
inline constexpr double kSublayerNormTolerance = 1e-12;

/// Parameter groups, in this order: emb, [pos], then per layer i:
/// l{i}.h{j}.wq / .wk / .wv for every head, l{i}.wo, l{i}.ln1.g, l{i}.wi,
/// l{i}.wf, l{i}.ln2.g (biases add .b groups after their weight). Weights are
/// [in, out] with entries N(0, 1/fan_in); the embedding (one-hot input, so
/// fan_in 1) is N(0, 1); gains start at 1 and biases at 0.
ParameterSet init_params(const TransformerConfig& cfg, Rng& rng);

/// Adds a classifier group `cls` of shape [d_model, classes], N(0, 1/d_model).
void add_classifier(ParameterSet& params, const TransformerConfig& cfg, std::size_t classes, Rng& rng);

/// Groups that carry the model's scale: everything except the embeddings and
/// single-element groups.
ParameterSet weight_groups(const ParameterSet& params);

/// [T, vocab] one-hot rows. ContractError for an out-of-vocabulary token or an
/// empty sequence.
Tensor one_hot(std::span<const int> tokens, std::size_t vocab);

// ---------------------------------------------------------------------------
// Graph builders.

struct HeadNodes {
  NodeId output = 0;     // H = A V, [T, d_k]
  NodeId attention = 0;  // A, [T, T]
};

/// One self-attention head on X [T, d_model] with [d_model, d_k] weights.
HeadNodes attention_head(Graph& g, NodeId x, NodeId wq, NodeId wk, NodeId wv, bool causal);

struct LayerNodes {
  std::vector<HeadNodes> heads;
  NodeId attention_sublayer = 0;
  NodeId feedforward_sublayer = 0;
};

struct EncoderNodes {
  std::string input;
  std::size_t length = 0;
  NodeId embedding = 0;
  std::vector<LayerNodes> layers;
  NodeId output = 0;
};

/// Appends an encoder reading the one-hot input `input` of shape [T, vocab].
EncoderNodes build_encoder(Graph& g, const TransformerConfig& cfg, std::size_t length,
                           const std::string& input = "x");

/// reps [T, d_model] times the classifier group `cls` [d_model, v].
NodeId classifier_logits(Graph& g, NodeId reps, std::size_t classes);

// ---------------------------------------------------------------------------
// Tensor-level operations.

struct HeadResult {
  Tensor output;
  Tensor attention;
};

HeadResult self_attention_head(const Tensor& x, const Tensor& wk, const Tensor& wq, const Tensor& wv,
                               bool causal = false);

/// Layer `layer` of `params` applied to X alone.
Tensor multi_head_sublayer(const Tensor& x, const ParameterSet& params, const TransformerConfig& cfg,
                           std::size_t layer);
Tensor feedforward_sublayer(const Tensor& x, const ParameterSet& params, const TransformerConfig& cfg,
                            std::size_t layer);

/// Logits = reps cls.
Tensor classifier_logits(const Tensor& reps, const Tensor& cls);

struct Encoding {
  Tensor embedding;
  /// Output of every sublayer, attention then feedforward, layer by layer.
  std::vector<Tensor> sublayers;
  /// attention[layer][head] is the [T, T] attention matrix.
  std::vector<std::vector<Tensor>> attention;
  /// heads[layer][head] is the [T, d_k] head output.
  std::vector<std::vector<Tensor>> heads;
  Tensor output;
};

/// Encoder graph for one sequence length, built once and evaluated many times.
class EncoderProgram {
 public:
  EncoderProgram(TransformerConfig cfg, std::size_t length);

  Encoding run(std::span<const int> tokens, const ParameterSet& params) const;
  Tensor output(std::span<const int> tokens, const ParameterSet& params) const;

  const TransformerConfig& config() const { return cfg_; }
  std::size_t length() const { return nodes_.length; }

 private:
  TransformerConfig cfg_;
  Graph graph_;
  EncoderNodes nodes_;
  std::vector<NodeId> outputs_;
};

Encoding encode(std::span<const int> tokens, const ParameterSet& params, const TransformerConfig& cfg);

/// Typed-DAG view of the encoder (plus a linear classifier when
/// `with_classifier`) for static degree propagation.
homog::NetGraph to_netgraph(const TransformerConfig& cfg, bool with_classifier = false);

// ---------------------------------------------------------------------------
// Language-model objective: mean next-token (or target) cross-entropy over a
// batch of equal-length sequences, read through the classifier `cls`.

struct Batch {
  std::vector<std::vector<int>> inputs;
  std::vector<std::vector<int>> targets;
};

class LmObjective {
 public:
  /// Graph for `batch` sequences of `length` tokens and `classes` targets.
  LmObjective(const TransformerConfig& cfg, std::size_t batch, std::size_t length, std::size_t classes);

  Inputs bind(const Batch& b) const;
  const GradProgram& program() const { return program_; }
  /// Logits of every sequence, stacked [batch * length, classes].
  Tensor logits(const Batch& b, const ParameterSet& params) const;
  /// Fraction of positions whose argmax logit equals the target.
  double accuracy(const Batch& b, const ParameterSet& params) const;

 private:
  static GradProgram build(const TransformerConfig& cfg, std::size_t batch, std::size_t length,
                           std::size_t classes, std::vector<NodeId>& logits);

  TransformerConfig cfg_;
  std::size_t batch_;
  std::size_t length_;
  std::size_t classes_;
  std::vector<NodeId> logits_;
  GradProgram program_;
};

// ---------------------------------------------------------------------------
// Snapshots: `<stem>.bin` holds every group flattened as 64-bit little-endian
// reals; `<stem>.json` lists {name, shape, offset} per group.

void save_snapshot(const ParameterSet& params, const std::filesystem::path& stem);
ParameterSet load_snapshot(const std::filesystem::path& stem);

}  // namespace normlab::tf
