#pragma once

// Optimizers with per-step telemetry, gradient-projection metrics, growth
// law simulators and fitters, and checkers for the norm-growth results on
// homogeneous networks.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "normlab/autodiff.hpp"
#include "normlab/random.hpp"
#include "normlab/stats.hpp"

namespace normlab::dyn {

// ---------------------------------------------------------------------------
// Optimizers.

enum class OptimizerKind { gd, gd_weight_decay, norm_sgd };
enum class Schedule { constant, inverse_sqrt };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::gd;
  double eta0 = 0.1;
  Schedule schedule = Schedule::constant;
  double lambda = 0.0;
  /// Step length of norm_sgd.
  double step_magnitude = 0.1;

  /// Throws ValidationError for a non-positive eta0 (zero is allowed for gd),
  /// negative lambda or non-positive step magnitude.
  void validate() const;
};

/// eta_t for t >= 1; ContractError for t = 0.
double learning_rate(const OptimizerSpec& spec, std::size_t t);

struct StepResult {
  ParameterSet delta;
  ParameterSet next;
  /// norm_sgd met a zero gradient and took no step.
  bool zero_gradient = false;
};

StepResult optimizer_step(const OptimizerSpec& spec, const ParameterSet& theta, const ParameterSet& grad,
                          std::size_t t);

/// | ||theta + delta||^2 - ||theta||^2 - (||delta||^2 + 2 theta . delta) |
/// relative to max(||theta + delta||^2, ||theta||^2).
double norm_expansion_residual(const ParameterSet& theta, const ParameterSet& delta);

// ---------------------------------------------------------------------------
// Training with telemetry.

struct TrajectoryPoint {
  std::size_t t = 0;
  double norm = 0.0;
  double step_norm = 0.0;
  double alignment = 0.0;
  double proj = 0.0;
  double proj_cos = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
  /// ||grad L|| over the measured groups; not part of the CSV.
  double grad_norm = 0.0;
};

inline constexpr const char* kTrajectoryHeader = "t,norm,step_norm,alignment,proj,proj_cos,loss,accuracy";

struct Objective {
  std::function<GradProgram::Result(const ParameterSet&)> value_and_grad;
  /// Optional; NaN is recorded when absent.
  std::function<double(const ParameterSet&)> accuracy;
  /// Groups entering the norm metrics; all groups when absent.
  std::function<ParameterSet(const ParameterSet&)> measured;
};

struct TrainResult {
  std::vector<TrajectoryPoint> points;
  ParameterSet final_params;
  /// Set when the loss or gradient stopped being finite or hit a degenerate
  /// point; the series ends at the step before.
  std::optional<std::size_t> diverged_at;
  std::size_t zero_gradient_steps = 0;
};

/// Runs steps t = 1..steps from theta0. Point t describes theta_t (before the
/// update) and delta_t; it is recorded when (t - 1) % stride == 0 and for the
/// last step.
TrainResult train_and_record(const Objective& obj, const ParameterSet& theta0, const OptimizerSpec& spec,
                             std::size_t steps, std::size_t stride = 1);

std::string trajectory_csv(std::span<const TrajectoryPoint> points);

// ---------------------------------------------------------------------------
// Projections.

struct Projection {
  double raw = 0.0;
  double cos = 0.0;
};

Projection projection(const ParameterSet& theta, const ParameterSet& grad);

/// d/dt (theta . dtheta/dt) under gradient flow dtheta/dt = -grad L:
/// ||grad L||^2 + theta . H grad L.
double projection_time_derivative(const HvpProgram& program, const Inputs& inputs, const ParameterSet& theta);

struct NormFlowPoint {
  double rho = 0.0;
  /// -theta . grad L
  double proj = 0.0;
  double d_rho_dt = 0.0;
  double d_proj_dt = 0.0;
};

inline constexpr const char* kNormFlowHeader = "rho,proj,d_rho_dt,d_proj_dt";

/// Vector field of (||theta||, -theta . grad L) under gradient flow.
NormFlowPoint norm_flow_point(const HvpProgram& program, const Inputs& inputs, const ParameterSet& theta);

// ---------------------------------------------------------------------------
// Growth laws.

/// ||theta_t|| for t = 1..steps of theta_{t+1} = theta_t + eps_t, theta_0 = 0,
/// eps_t ~ N(0, sigma^2 / n) per coordinate. ContractError for n = 0,
/// steps < 100 or negative sigma.
std::vector<double> simulate_random_walk(std::size_t n, double sigma, std::size_t steps, std::uint64_t seed);

enum class NormModel { aligned, misaligned };

/// log ||theta_t|| for t = 1..steps with ||theta_1|| = theta0 and
/// aligned:    ||theta_{t+1}|| = ||theta_t|| (1 + eta_t)
/// misaligned: ||theta_{t+1}||^2 = ||theta_t||^2 (1 + eta_t^2).
/// Kept in log space because aligned growth overflows doubles.
std::vector<double> simulate_norm_recurrence(NormModel model, const OptimizerSpec& schedule, double theta0,
                                             std::size_t steps);

enum class GrowthLaw { power, exp_sqrt };

struct GrowthFit {
  GrowthLaw law = GrowthLaw::power;
  /// Power exponent, or rate of exp(rate sqrt(t)).
  double exponent = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  /// First and last t of the fit window.
  std::size_t first = 0;
  std::size_t last = 0;
};

inline constexpr double kDefaultFitWindow = 0.8;

/// Fits series[i] (at t = i + 1) over its last `window` fraction: log y vs
/// log t for power, log y vs sqrt t for exp_sqrt. ContractError for fewer
/// than 50 points or a nonpositive value.
GrowthFit fit_growth_law(std::span<const double> series, GrowthLaw law, double window = kDefaultFitWindow);
/// Same, for a series already in log space.
GrowthFit fit_growth_law_log(std::span<const double> log_series, GrowthLaw law,
                             double window = kDefaultFitWindow);

// ---------------------------------------------------------------------------
// Norm-growth and projection checks.

struct Theorem1Check {
  bool condition = false;
  double lhs = 0.0;
  double rhs = 0.0;
};

/// eta (1 - alpha)^2 min_i ||grad f_i||^2 > 16 max_j |f_j|, from gradient
/// norms (not squared) and class outputs. ContractError for empty lists,
/// alpha outside [0, 1] or eta <= 0.
Theorem1Check theorem1_condition_check(double eta, double alpha, std::span<const double> grad_norms,
                                       std::span<const double> outputs);

struct Theorem1Trial {
  Theorem1Check check;
  double eta = 0.0;
  double alpha = 0.0;
  /// ||delta||^2 + 2 theta . delta of the GD step taken at eta.
  double delta_norm_sq = 0.0;
  /// ||theta_{t+1}||^2 - ||theta_t||^2 measured directly.
  double measured_change = 0.0;
};

struct Theorem1Setup {
  std::size_t examples = 8;
  std::size_t inputs = 5;
  std::size_t hidden = 6;
  std::size_t classes = 3;
  /// eta is drawn log-uniformly in [low, high] times the smallest eta that
  /// satisfies the condition.
  double eta_low = 0.25;
  double eta_high = 4.0;
};

/// One random 2-homogeneous net f(x) = relu(x W1) W2 with softmax
/// cross-entropy on random labels, where f_j is the mean of output j over the
/// examples; evaluates the condition and takes a real GD step.
Theorem1Trial theorem1_trial(Rng& rng, const Theorem1Setup& setup = {});

struct BinaryProjection {
  double proj = 0.0;
  bool correct = false;
  /// correct => proj < 0; wrong => proj >= k |f| / 2.
  bool holds = false;
};

/// proj = (sigma(f) - y) k f. DegenerateError for f = 0; ContractError for
/// k < 1 or y not in {0, 1}.
BinaryProjection binary_ce_projection_check(double f, int k, int y);

/// Fraction of rows whose argmax logit (lowest index on ties) is the label's
/// index. ContractError for an empty batch or mismatched shapes.
double accuracy_metric(const Tensor& logits, const Tensor& labels);

struct GradientBounds {
  double grad_norm_sq = 0.0;
  double lower = 0.0;
  double upper = 2.0;
  bool holds = false;
};

/// Bounds 1/4 (1 - alpha)^2 <= ||grad_f L||^2 <= 2 with ||grad_f L||^2 read
/// as the mean over examples of ||softmax(f) - y||^2; `residuals` holds one
/// softmax(f) - y row per example.
GradientBounds gradient_norm_bounds_check(const Tensor& residuals, double alpha);

struct VanishingStepFit {
  LinearFit fit;
  bool decaying = false;
};

/// Slope of log ||grad L|| - (k - 1) log rho against rho over points that all
/// have accuracy 1. ContractError naming the first step whose accuracy is
/// below 1, or for fewer than two points.
VanishingStepFit vanishing_step_check(std::span<const TrajectoryPoint> points, int k);

// ---------------------------------------------------------------------------
// Equilibrium norm under fake labels.

enum class WrongLabel { random_other, argmin };

/// A fixed batch, evaluated at any parameter scale.
struct LabelledModel {
  /// Logits [examples, classes] at theta.
  std::function<Tensor(const ParameterSet&)> logits;
  /// Mean softmax cross-entropy and its gradient at theta for one-hot labels.
  std::function<GradProgram::Result(const ParameterSet&, const Tensor& labels)> loss;
};

/// Labels for accuracy a: the first round(a Z) examples of a seeded
/// permutation get the argmax class, the rest a different class. The wrong
/// classes and permutation depend only on the seed, so label sets are nested
/// across a.
Tensor fake_labels(const Tensor& logits, double a, WrongLabel policy, std::uint64_t seed);

struct EquilibriumPoint {
  double c = 0.0;
  double rho = 0.0;
  double proj = 0.0;
};

struct EquilibriumScan {
  double a = 0.0;
  std::vector<EquilibriumPoint> curve;
  /// rho* = c* ||theta0|| at the first grid point with proj > 0.
  std::optional<double> rho_star;
};

/// Projection c theta0 . grad L at c theta0 for every c of the increasing
/// grid, with labels rebuilt at each scale. ContractError for a outside
/// [0, 1] or a grid that is empty or not increasing.
EquilibriumScan equilibrium_norm_scan(const LabelledModel& model, const ParameterSet& theta0, double a,
                                      std::span<const double> c_grid, WrongLabel policy = WrongLabel::random_other,
                                      std::uint64_t label_seed = 0);

// ---------------------------------------------------------------------------
// Grids.

struct ScanCell {
  std::size_t row = 0;
  std::size_t col = 0;
  double median = 0.0;
  std::vector<double> samples;
  /// Empty unless every seed of the cell failed.
  std::string error;
};

struct GridResult {
  std::vector<double> rows;
  std::vector<double> cols;
  std::vector<ScanCell> cells;

  const ScanCell& at(std::size_t r, std::size_t c) const { return cells.at(r * cols.size() + c); }
};

using CellFunction = std::function<double(double row, double col, std::uint64_t seed)>;

/// Median over seeds of fn(row, col, seed) for every cell. Seed s is
/// split_seed(root_seed, s) in every cell, so cells are compared on common
/// random draws. Runs cells and seeds on up to
/// `threads` threads. A failing seed is dropped; a cell whose seeds all fail
/// keeps the first error message and a NaN median.
GridResult scan_grid(std::span<const double> rows, std::span<const double> cols, std::size_t seeds,
                     std::uint64_t root_seed, const CellFunction& fn, std::size_t threads = 1);

/// CSV matrix: header `<row_name>\<col_name>,<col values...>`, one row per
/// row value holding the cell medians.
std::string grid_csv(const GridResult& g, const std::string& row_name, const std::string& col_name);

}  // namespace normlab::dyn
