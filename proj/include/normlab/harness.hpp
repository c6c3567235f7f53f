#pragma once

// Experiment runner: flat JSON configs, dispatch to the module pipelines,
// CSV/JSON emission and run manifests.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "normlab/corpus.hpp"
#include "normlab/experiments.hpp"

namespace normlab::harness {

enum class Kind { homogeneity, saturation, train, dynamics, projection, equilibrium, sweep, normflow };

inline constexpr Kind kAllKinds[] = {Kind::homogeneity, Kind::saturation, Kind::train,       Kind::dynamics,
                                     Kind::projection,  Kind::equilibrium, Kind::sweep,      Kind::normflow};

std::string_view kind_name(Kind k);
/// ValidationError for an unknown name.
Kind parse_kind(std::string_view name);

/// Every field has a default; a config file only lists what it changes.
struct ExperimentConfig {
  Kind kind = Kind::train;
  std::uint64_t seed = 0;
  /// Worker threads for grid kinds (0 = one per hardware thread).
  std::size_t threads = 1;
  /// Telemetry stride for training.
  std::size_t stride = 1;
  /// Output directory; empty means the caller decides.
  std::string out;

  tf::TransformerConfig model;
  dyn::OptimizerSpec optimizer{dyn::OptimizerKind::gd, 0.5};
  std::size_t steps = 300;
  /// Token corpus; its vocabulary is always the model's.
  data::CorpusSpec corpus;
  /// Seeds per grid cell (scans) or per scale (normflow).
  std::size_t seeds = 3;

  std::vector<double> c_grid;
  std::vector<double> v_grid{2, 8, 32, 128};
  std::vector<double> eta_grid{0.5, 1.0, 2.0};
  std::vector<double> lambda_grid{0.0, 1e-3, 1e-2, 1e-1};
  std::vector<double> accuracy_grid{0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

  // homogeneity: "transformer" or the path of a NetGraph text file.
  std::string source = "transformer";
  bool classifier = false;
  /// Multiplies the initial parameters before probing.
  double init_scale = 4.0;

  // saturation and train.
  sat::Probe probe = sat::Probe::heads;
  std::size_t probe_inputs = 8;
  double head_mass = 0.9;
  double saturation_c = 1000.0;
  std::size_t warmup = 20;
  /// Snapshot stem to analyse instead of a random initialisation.
  std::string snapshot;

  // dynamics.
  std::string process = "misaligned";
  std::size_t walk_dim = 100;
  double sigma = 0.1;
  double theta0 = 1.0;
  /// Growth law to fit; empty picks exp_sqrt for the aligned recurrence and
  /// power otherwise.
  std::string law;

  // projection.
  std::size_t batch = 16;
  bool classifier_in_theta = false;
  bool embedding_in_theta = false;
  dyn::ClassifierInit classifier_init = dyn::ClassifierInit::fan_out;
  double classifier_gain = 1.0;

  // equilibrium.
  dyn::SublayerSpec sublayer;
  dyn::WrongLabel wrong_label = dyn::WrongLabel::random_other;

  /// ValidationError naming the offending field.
  void validate() const;
};

/// Defaults for `kind`.
ExperimentConfig default_config(Kind kind);

/// Parses a flat JSON object. "kind" is required unless `expected` is given;
/// when both are present they must agree. Unknown fields, wrong types and
/// invalid values raise ValidationError naming the field.
ExperimentConfig parse_config(std::string_view text, std::optional<Kind> expected = std::nullopt);

/// Every field, as a JSON object with sorted keys; parse_config of the result
/// gives the same config.
std::string config_json(const ExperimentConfig& cfg);

struct RunManifest {
  Kind kind = Kind::train;
  /// SHA-256 of the config bytes, lowercase hex.
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string version;
  double wall_time_s = 0.0;
  /// Emitted files relative to the output directory, sorted.
  std::vector<std::string> files;
};

std::string manifest_json(const RunManifest& m);

std::string sha256_hex(std::string_view bytes);

std::string_view version();

/// Runs the experiment and writes its files plus config.json and
/// manifest.json into `out` (created if needed). `config_bytes` are hashed
/// into the manifest. Errors from the pipelines propagate with the step
/// prefixed; an unwritable directory raises std::runtime_error.
RunManifest run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out,
                           std::string_view config_bytes);

/// Command line entry point; returns the process exit code (0 success,
/// 1 runtime failure, 2 invalid usage or config).
int run_cli(int argc, char** argv);

}  // namespace normlab::harness
