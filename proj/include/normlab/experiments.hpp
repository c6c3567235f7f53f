#pragma once

// Transformer experiments built on the dynamics toolkit: tiny language-model
// training with norm and saturation telemetry, the softmax projection scan,
// the weight-decay sweep and the equilibrium scan on a sublayer.

#include <memory>

#include "normlab/corpus.hpp"
#include "normlab/dynamics.hpp"
#include "normlab/saturation.hpp"

namespace normlab::dyn {

/// A transformer language model over a fixed corpus, trained full-batch.
class TinyLm {
 public:
  /// ContractError when the corpus vocabulary or lengths do not fit `cfg`.
  TinyLm(const tf::TransformerConfig& cfg, const data::Corpus& corpus);

  /// Encoder parameters plus a "cls" layer onto the vocabulary.
  ParameterSet init(std::uint64_t seed) const;
  /// Loss and gradient over the whole corpus; norms over the weight groups
  /// (embeddings and scalars excluded).
  Objective objective() const;

  const tf::TransformerConfig& config() const { return cfg_; }
  const tf::Batch& batch() const { return batch_; }
  const tf::LmObjective& lm() const { return *lm_; }

 private:
  tf::TransformerConfig cfg_;
  tf::Batch batch_;
  std::shared_ptr<const tf::LmObjective> lm_;
};

struct TinyLmOptions {
  OptimizerSpec optimizer{OptimizerKind::gd, 0.5};
  std::size_t steps = 300;
  std::size_t stride = 1;
  /// Steps ignored by the growth fraction.
  std::size_t warmup = 20;
  double saturation_c = 1000.0;
  sat::Probe probe = sat::Probe::heads;
  /// Sequences used for the saturation and head statistics.
  std::size_t probe_inputs = 8;
  double head_mass = 0.9;
};

struct TinyLmRun {
  TrainResult train;
  /// Fraction of recorded steps after warm-up whose norm exceeds the previous
  /// recorded norm.
  double growth_fraction = 0.0;
  sat::SaturationReport saturation_init;
  sat::SaturationReport saturation_end;
  sat::HeadAttentionStats heads;
  bool has_argmax_head = false;
  bool has_mean_head = false;
};

/// Fraction of consecutive point pairs past `warmup` with increasing norm.
/// ContractError when fewer than two points remain.
double growth_fraction(std::span<const TrajectoryPoint> points, std::size_t warmup);

TinyLmRun run_tiny_lm(const TinyLm& lm, const TinyLmOptions& opt, std::uint64_t seed);

// ---------------------------------------------------------------------------

/// Standard deviation of the random layer onto the classes: 1/sqrt(d_model),
/// sqrt(2/(d_model + classes)) or 1/sqrt(classes).
enum class ClassifierInit { fan_in, glorot, fan_out };

struct ProjectionScanSpec {
  tf::TransformerConfig model;
  std::size_t batch = 16;
  std::size_t length = 8;
  /// Whether the final linear layer counts as a parameter (scaled with c and
  /// entering the cosine) or stays a fixed random map.
  bool classifier_in_theta = false;
  /// Whether embeddings enter the cosine. They are scaled with c either way.
  bool embedding_in_theta = false;
  ClassifierInit classifier_init = ClassifierInit::fan_out;
  /// Multiplies the classifier standard deviation.
  double classifier_gain = 1.0;
};

/// cos(theta, grad L) for a random transformer at scale c, with a random
/// linear layer onto `classes` logits, random tokens and random labels.
double softmax_projection_cell(const ProjectionScanSpec& spec, std::size_t classes, double c,
                               std::uint64_t seed);

/// Rows are class counts, columns scales; medians over seeds.
GridResult softmax_projection_scan(const ProjectionScanSpec& spec, std::span<const double> classes,
                                   std::span<const double> scales, std::size_t seeds, std::uint64_t root_seed,
                                   std::size_t threads = 1);

// ---------------------------------------------------------------------------

struct SweepSpec {
  tf::TransformerConfig model;
  data::CorpusSpec corpus;
  std::size_t steps = 100;
};

/// ||theta_T|| / ||theta_1|| over weight groups after `steps` of gd with
/// weight decay.
double weight_decay_cell(const SweepSpec& spec, double eta, double lambda, std::uint64_t seed);

/// Rows are learning rates, columns decay rates; medians over seeds.
GridResult weight_decay_sweep(const SweepSpec& spec, std::span<const double> etas, std::span<const double> lambdas,
                              std::size_t seeds, std::uint64_t root_seed, std::size_t threads = 1);

// ---------------------------------------------------------------------------

struct SublayerSpec {
  std::size_t d_model = 10;
  std::size_t d_ff = 10;
  std::size_t examples = 64;
  std::size_t classes = 2;
};

struct SublayerModel {
  LabelledModel model;
  ParameterSet theta0;
};

/// Feed-forward sublayer without residual, g * lnorm(relu(X Wi) Wf), followed
/// by a fixed random linear map onto the classes, on a random input batch.
/// Exactly 1-homogeneous in (Wi, Wf, g).
SublayerModel feedforward_sublayer_model(const SublayerSpec& spec, std::uint64_t seed);

/// One scan per accuracy on the same model, grid and labels.
std::vector<EquilibriumScan> equilibrium_curve(const SublayerModel& m, std::span<const double> accuracies,
                                               std::span<const double> c_grid,
                                               WrongLabel policy = WrongLabel::random_other,
                                               std::uint64_t label_seed = 0);

/// n points log-spaced over [lo, hi].
std::vector<double> log_space(double lo, double hi, std::size_t n);

}  // namespace normlab::dyn
