#pragma once

// Saturation of a network (how close f(x; theta) is to its limit under
// parameter scaling), hard-attention counterparts of softmax attention, and
// per-head attention statistics.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "normlab/transformer.hpp"

namespace normlab::sat {

/// theta scaled by c. ContractError unless c > 0.
ParameterSet scale_params(const ParameterSet& theta, double c);

struct LayerSimilarity {
  std::size_t layer = 0;
  /// Mean over inputs and positions of cos(repr(theta), repr(c theta)).
  double similarity = 0.0;
};

struct SaturationReport {
  double c = 1.0;
  std::string probe;
  std::vector<LayerSimilarity> per_layer;
  /// Mean of the per-layer similarities.
  double overall = 0.0;
};

/// Representations of input `index` under `theta`, one matrix per probed
/// layer; each row is a position.
using LayerProbe = std::function<std::vector<Tensor>(const ParameterSet& theta, std::size_t index)>;

/// Generic form: compares probe(theta, i) with probe(c theta, i) row by row.
/// ContractError for c < 1 or no inputs; NumericError naming the layer when
/// the scaled representation is not finite.
SaturationReport saturation_level(const LayerProbe& probe, std::size_t n_inputs, const ParameterSet& theta,
                                  double c, std::string probe_name = "custom");

enum class Probe {
  /// Residual stream after each layer.
  layers,
  /// Every attention head's output, averaged over the heads of a layer.
  heads,
};

std::string_view probe_name(Probe p);

/// Transformer form over a set of token sequences.
SaturationReport saturation_level(const tf::TransformerConfig& cfg, const ParameterSet& theta,
                                  std::span<const std::vector<int>> inputs, double c,
                                  Probe probe = Probe::layers);

inline constexpr double kDefaultTieTolerance = 1e-9;

/// Uniform weight over {j : a_j >= max(a) - tau (max(a) - min(a))} where the
/// range is taken over finite entries; -inf entries (masked positions) get
/// zero. ContractError for NaN, +inf, or a row without finite entries.
std::vector<double> hard_argmax(std::span<const double> scores, double tau = kDefaultTieTolerance);

/// Row-wise hard_argmax of (H Q)(H K)^T applied to H V. With `causal`,
/// position i only sees j <= i.
Tensor saturated_attention_forward(const Tensor& h, const Tensor& q, const Tensor& k, const Tensor& v,
                                   bool causal = false, double tau = kDefaultTieTolerance);

/// softmax(c (H Q)(H K)^T) H V, the finite-scale counterpart.
Tensor softmax_attention_forward(const Tensor& h, const Tensor& q, const Tensor& k, const Tensor& v, double c,
                                 bool causal = false);

enum class HeadClass { argmax_like, mean_like, intermediate };

std::string_view head_class_name(HeadClass c);

struct HeadCutoffs {
  /// argmax-like when the median count is at most this.
  double argmax_max_count = 2.0;
  /// mean-like when the median count is at least this fraction of the mean
  /// visible length.
  double mean_min_fraction = 0.75;
};

struct HeadAttention {
  std::string name;
  /// One [T, T] row-stochastic matrix per input.
  std::vector<Tensor> matrices;
};

struct HeadStats {
  std::string name;
  /// Positions attended, one entry per query over all inputs.
  std::vector<std::size_t> counts;
  double median_count = 0.0;
  double mean_visible = 0.0;
  HeadClass classification = HeadClass::intermediate;
};

struct HeadAttentionStats {
  double mass = 0.9;
  std::vector<HeadStats> heads;
};

/// Per query, the size of the smallest set of positions holding at least
/// `mass` of the attention. Visible length is i + 1 under `causal`, else T.
/// ContractError for mass outside (0, 1) or rows not summing to 1 within 1e-6.
HeadAttentionStats head_attention_stats(const std::vector<HeadAttention>& heads, double mass = 0.9,
                                        bool causal = false, HeadCutoffs cutoffs = {});

/// Attention matrices of every head of `cfg` over `inputs`, named l{i}.h{j}.
std::vector<HeadAttention> collect_attention(const tf::TransformerConfig& cfg, const ParameterSet& theta,
                                             std::span<const std::vector<int>> inputs);

std::string report_json(const SaturationReport& r);
std::string head_stats_json(const HeadAttentionStats& s);
/// CSV with header `head,count,frequency`: for every head, the fraction of
/// queries attending to each count that occurs.
std::string head_histogram_csv(const HeadAttentionStats& s);

}  // namespace normlab::sat
