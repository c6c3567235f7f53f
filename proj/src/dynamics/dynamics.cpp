#include "normlab/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <numeric>

#include "normlab/error.hpp"
#include "normlab/functional.hpp"
#include "normlab/parallel.hpp"

namespace normlab::dyn {

namespace {

constexpr std::size_t kMinFitPoints = 50;
constexpr std::size_t kMinWalkSteps = 100;
// Rounding slack on the gradient-norm bounds.
constexpr double kBoundSlack = 1e-12;

std::string real(double v) { return fmt::format("{}", v); }

bool finite(const ParameterSet& p) {
  for (const auto& [name, t] : p.groups()) {
    if (!t.all_finite()) return false;
  }
  return true;
}

std::size_t argmax_row(const Tensor& t, std::size_t r) {
  const std::size_t w = t.cols();
  std::size_t best = 0;
  for (std::size_t j = 1; j < w; ++j) {
    if (t.at(r, j) > t.at(r, best)) best = j;
  }
  return best;
}

std::size_t argmin_row(const Tensor& t, std::size_t r) {
  const std::size_t w = t.cols();
  std::size_t best = 0;
  for (std::size_t j = 1; j < w; ++j) {
    if (t.at(r, j) < t.at(r, best)) best = j;
  }
  return best;
}

GrowthFit fit_log(std::span<const double> logs, GrowthLaw law, double window) {
  if (logs.size() < kMinFitPoints) {
    throw ContractError("fit_growth_law: need at least " + std::to_string(kMinFitPoints) + " points, got " +
                        std::to_string(logs.size()));
  }
  if (!(window > 0.0 && window <= 1.0)) throw ContractError("fit_growth_law: window must be in (0, 1]");
  const std::size_t n = logs.size();
  const auto kept = std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(window * static_cast<double>(n))));
  const std::size_t begin = n - std::min(kept, n);
  std::vector<double> x, y;
  for (std::size_t i = begin; i < n; ++i) {
    const double t = static_cast<double>(i + 1);
    x.push_back(law == GrowthLaw::power ? std::log(t) : std::sqrt(t));
    y.push_back(logs[i]);
  }
  const LinearFit f = fit_line(x, y);
  return {law, f.slope, f.intercept, f.r2, begin + 1, n};
}

}  // namespace

// ---------------------------------------------------------------------------

void OptimizerSpec::validate() const {
  if (!std::isfinite(eta0) || eta0 < 0.0 || (eta0 == 0.0 && kind != OptimizerKind::gd)) {
    throw ValidationError("optimizer: eta0 must be positive (zero only for gd), got " + real(eta0));
  }
  if (!std::isfinite(lambda) || lambda < 0.0) throw ValidationError("optimizer: lambda must be nonnegative");
  if (kind == OptimizerKind::norm_sgd && !(step_magnitude > 0.0 && std::isfinite(step_magnitude))) {
    throw ValidationError("optimizer: norm_sgd step magnitude must be positive");
  }
}

double learning_rate(const OptimizerSpec& spec, std::size_t t) {
  if (t == 0) throw ContractError("learning_rate: steps start at t = 1");
  return spec.schedule == Schedule::constant ? spec.eta0 : spec.eta0 / std::sqrt(static_cast<double>(t));
}

StepResult optimizer_step(const OptimizerSpec& spec, const ParameterSet& theta, const ParameterSet& grad,
                          std::size_t t) {
  const double eta = learning_rate(spec, t);
  StepResult r;
  switch (spec.kind) {
    case OptimizerKind::gd:
      r.delta = grad.scaled(-eta);
      break;
    case OptimizerKind::gd_weight_decay:
      r.delta = grad.scaled(-eta).axpy(-spec.lambda, theta);
      break;
    case OptimizerKind::norm_sgd: {
      const double g = grad.norm();
      if (g == 0.0) {
        r.delta = grad.zeros_like();
        r.zero_gradient = true;
      } else {
        r.delta = grad.scaled(-spec.step_magnitude / g);
      }
      break;
    }
  }
  r.next = theta.plus(r.delta);
  return r;
}

double norm_expansion_residual(const ParameterSet& theta, const ParameterSet& delta) {
  const double before = theta.dot(theta);
  const ParameterSet next = theta.plus(delta);
  const double after = next.dot(next);
  const double predicted = delta.dot(delta) + 2.0 * theta.dot(delta);
  const double scale = std::max({after, before, std::numeric_limits<double>::min()});
  return std::abs(after - before - predicted) / scale;
}

// ---------------------------------------------------------------------------

TrainResult train_and_record(const Objective& obj, const ParameterSet& theta0, const OptimizerSpec& spec,
                             std::size_t steps, std::size_t stride) {
  if (steps == 0) throw ContractError("train_and_record: need at least one step");
  if (stride == 0) throw ContractError("train_and_record: stride must be positive");
  if (!obj.value_and_grad) throw ContractError("train_and_record: objective has no gradient");
  spec.validate();
  auto measured = [&](const ParameterSet& p) { return obj.measured ? obj.measured(p) : p; };

  TrainResult out;
  ParameterSet theta = theta0;
  for (std::size_t t = 1; t <= steps; ++t) {
    GradProgram::Result vg;
    try {
      vg = obj.value_and_grad(theta);
    } catch (const NumericError&) {
      out.diverged_at = t;
      break;
    } catch (const DegenerateError&) {
      out.diverged_at = t;
      break;
    }
    if (!std::isfinite(vg.value) || !finite(vg.grad)) {
      out.diverged_at = t;
      break;
    }
    StepResult step = optimizer_step(spec, theta, vg.grad, t);
    if (step.zero_gradient) ++out.zero_gradient_steps;
    if (!finite(step.next)) {
      out.diverged_at = t;
      break;
    }
    if ((t - 1) % stride == 0 || t == steps) {
      const ParameterSet m = measured(theta);
      const ParameterSet md = measured(step.delta);
      const ParameterSet mg = measured(vg.grad);
      TrajectoryPoint p;
      p.t = t;
      p.norm = m.norm();
      p.step_norm = md.norm();
      p.alignment = cosine(md, m);
      p.proj = m.dot(mg);
      p.proj_cos = cosine(m, mg);
      p.loss = vg.value;
      p.accuracy = obj.accuracy ? obj.accuracy(theta) : std::numeric_limits<double>::quiet_NaN();
      p.grad_norm = mg.norm();
      out.points.push_back(p);
    }
    theta = std::move(step.next);
  }
  out.final_params = std::move(theta);
  return out;
}

std::string trajectory_csv(std::span<const TrajectoryPoint> points) {
  std::string s = std::string(kTrajectoryHeader) + "\n";
  for (const auto& p : points) {
    s += fmt::format("{},{},{},{},{},{},{},{}\n", p.t, p.norm, p.step_norm, p.alignment, p.proj, p.proj_cos, p.loss,
                     p.accuracy);
  }
  return s;
}

// ---------------------------------------------------------------------------

Projection projection(const ParameterSet& theta, const ParameterSet& grad) {
  return {theta.dot(grad), cosine(theta, grad)};
}

double projection_time_derivative(const HvpProgram& program, const Inputs& inputs, const ParameterSet& theta) {
  const ParameterSet g = program.apply(inputs, theta, theta.zeros_like()).grad;
  const HvpProgram::Result r = program.apply(inputs, theta, g);
  return g.dot(g) + theta.dot(r.hvp);
}

NormFlowPoint norm_flow_point(const HvpProgram& program, const Inputs& inputs, const ParameterSet& theta) {
  const ParameterSet g = program.apply(inputs, theta, theta.zeros_like()).grad;
  const HvpProgram::Result r = program.apply(inputs, theta, g);
  NormFlowPoint p;
  p.rho = theta.norm();
  p.proj = -theta.dot(g);
  p.d_rho_dt = p.rho > 0.0 ? p.proj / p.rho : 0.0;
  p.d_proj_dt = g.dot(g) + theta.dot(r.hvp);
  return p;
}

// ---------------------------------------------------------------------------

std::vector<double> simulate_random_walk(std::size_t n, double sigma, std::size_t steps, std::uint64_t seed) {
  if (n == 0) throw ContractError("simulate_random_walk: dimension must be at least 1");
  if (steps < kMinWalkSteps) throw ContractError("simulate_random_walk: need at least 100 steps");
  if (!(sigma >= 0.0)) throw ContractError("simulate_random_walk: sigma must be nonnegative");
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double sd = sigma / std::sqrt(static_cast<double>(n));
  std::vector<double> theta(n, 0.0), norms;
  norms.reserve(steps);
  for (std::size_t t = 1; t <= steps; ++t) {
    double sq = 0.0;
    for (double& x : theta) {
      x += sd * noise(rng);
      sq += x * x;
    }
    norms.push_back(std::sqrt(sq));
  }
  return norms;
}

std::vector<double> simulate_norm_recurrence(NormModel model, const OptimizerSpec& schedule, double theta0,
                                             std::size_t steps) {
  if (!(theta0 > 0.0)) throw ContractError("simulate_norm_recurrence: initial norm must be positive");
  std::vector<double> logs;
  logs.reserve(steps);
  double log_norm = std::log(theta0);
  for (std::size_t t = 1; t <= steps; ++t) {
    logs.push_back(log_norm);
    const double eta = learning_rate(schedule, t);
    log_norm += model == NormModel::aligned ? std::log1p(eta) : 0.5 * std::log1p(eta * eta);
  }
  return logs;
}

GrowthFit fit_growth_law(std::span<const double> series, GrowthLaw law, double window) {
  std::vector<double> logs;
  logs.reserve(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (!(series[i] > 0.0)) {
      throw ContractError("fit_growth_law: value " + real(series[i]) + " at t = " + std::to_string(i + 1) +
                          " is not positive");
    }
    logs.push_back(std::log(series[i]));
  }
  return fit_log(logs, law, window);
}

GrowthFit fit_growth_law_log(std::span<const double> log_series, GrowthLaw law, double window) {
  for (double v : log_series) {
    if (!std::isfinite(v)) throw ContractError("fit_growth_law: non-finite log value");
  }
  return fit_log(log_series, law, window);
}

// ---------------------------------------------------------------------------

Theorem1Check theorem1_condition_check(double eta, double alpha, std::span<const double> grad_norms,
                                       std::span<const double> outputs) {
  if (grad_norms.empty() || outputs.empty()) throw ContractError("theorem1_condition_check: empty class list");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("theorem1_condition_check: alpha must be in [0, 1]");
  if (!(eta > 0.0)) throw ContractError("theorem1_condition_check: eta must be positive");
  double min_sq = std::numeric_limits<double>::infinity();
  for (double g : grad_norms) min_sq = std::min(min_sq, g * g);
  double max_f = 0.0;
  for (double f : outputs) max_f = std::max(max_f, std::abs(f));
  Theorem1Check c;
  c.lhs = eta * (1.0 - alpha) * (1.0 - alpha) * min_sq;
  c.rhs = 16.0 * max_f;
  c.condition = c.lhs > c.rhs;
  return c;
}

Theorem1Trial theorem1_trial(Rng& rng, const Theorem1Setup& s) {
  if (s.examples == 0 || s.inputs == 0 || s.hidden == 0 || s.classes < 2) {
    throw ContractError("theorem1_trial: degenerate setup");
  }
  const std::size_t n = s.examples, v = s.classes;
  const Tensor x = randn({n, s.inputs}, rng);
  Tensor labels({n, v}, 0.0);
  std::uniform_int_distribution<std::size_t> pick(0, v - 1);
  for (std::size_t i = 0; i < n; ++i) labels.at(i, pick(rng)) = 1.0;
  ParameterSet theta;
  theta.add("w1", randn({s.inputs, s.hidden}, rng, 1.0 / std::sqrt(static_cast<double>(s.inputs))));
  theta.add("w2", randn({s.hidden, v}, rng, 1.0 / std::sqrt(static_cast<double>(s.hidden))));

  auto build = [&](Graph& g) {
    const NodeId in = g.constant(x);
    const NodeId h = g.relu(g.matmul(in, g.param("w1", {s.inputs, s.hidden})));
    return g.matmul(h, g.param("w2", {s.hidden, v}));
  };

  Graph lg;
  const NodeId lf = build(lg);
  const GradProgram loss_program(lg, lg.mean_all(lg.softmax_ce(lf, lg.constant(labels))));
  const Tensor logits = eval_graph(lg, lf, {}, theta);

  std::vector<double> grad_norms, outputs;
  for (std::size_t j = 0; j < v; ++j) {
    Tensor pick_col({n, v}, 0.0);
    for (std::size_t i = 0; i < n; ++i) pick_col.at(i, j) = 1.0 / static_cast<double>(n);
    Graph g;
    const NodeId f = build(g);
    const GradProgram fj(g, g.dot(f, g.constant(pick_col)));
    const GradProgram::Result r = fj.value_and_grad({}, theta);
    outputs.push_back(r.value);
    grad_norms.push_back(r.grad.norm());
  }

  Theorem1Trial trial;
  trial.alpha = accuracy_metric(logits, labels);
  double min_sq = std::numeric_limits<double>::infinity();
  for (double g : grad_norms) min_sq = std::min(min_sq, g * g);
  double max_f = 0.0;
  for (double f : outputs) max_f = std::max(max_f, std::abs(f));
  const double slack = (1.0 - trial.alpha) * (1.0 - trial.alpha) * min_sq;
  const double eta_min = slack > 0.0 ? 16.0 * max_f / slack : 1.0;
  std::uniform_real_distribution<double> u(std::log(s.eta_low), std::log(s.eta_high));
  trial.eta = eta_min * std::exp(u(rng));
  trial.check = theorem1_condition_check(trial.eta, trial.alpha, grad_norms, outputs);

  const ParameterSet g = loss_program.value_and_grad({}, theta).grad;
  const ParameterSet delta = g.scaled(-trial.eta);
  trial.delta_norm_sq = delta.dot(delta) + 2.0 * theta.dot(delta);
  const ParameterSet next = theta.plus(delta);
  trial.measured_change = next.dot(next) - theta.dot(theta);
  return trial;
}

BinaryProjection binary_ce_projection_check(double f, int k, int y) {
  if (f == 0.0 || !std::isfinite(f)) throw DegenerateError("binary_ce_projection_check: prediction undefined at f = 0");
  if (k < 1) throw ContractError("binary_ce_projection_check: k must be at least 1");
  if (y != 0 && y != 1) throw ContractError("binary_ce_projection_check: y must be 0 or 1");
  BinaryProjection b;
  b.proj = binary_ce_residual(f, y) * static_cast<double>(k) * f;
  b.correct = (f > 0.0) == (y == 1);
  b.holds = b.correct ? b.proj < 0.0 : b.proj >= static_cast<double>(k) * std::abs(f) / 2.0;
  return b;
}

double accuracy_metric(const Tensor& logits, const Tensor& labels) {
  if (logits.shape().size() != 2 || logits.rows() == 0) throw ContractError("accuracy_metric: empty batch");
  if (logits.shape() != labels.shape()) throw ContractError("accuracy_metric: logits and labels differ in shape");
  std::size_t hits = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) hits += argmax_row(logits, r) == argmax_row(labels, r);
  return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

GradientBounds gradient_norm_bounds_check(const Tensor& residuals, double alpha) {
  if (residuals.shape().size() != 2 || residuals.rows() == 0) throw ContractError("gradient_norm_bounds_check: empty batch");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("gradient_norm_bounds_check: alpha must be in [0, 1]");
  double sum = 0.0;
  for (double r : residuals.data()) sum += r * r;
  GradientBounds b;
  b.grad_norm_sq = sum / static_cast<double>(residuals.rows());
  b.lower = 0.25 * (1.0 - alpha) * (1.0 - alpha);
  b.holds = b.grad_norm_sq >= b.lower - kBoundSlack && b.grad_norm_sq <= b.upper + kBoundSlack;
  return b;
}

VanishingStepFit vanishing_step_check(std::span<const TrajectoryPoint> points, int k) {
  if (k < 1) throw ContractError("vanishing_step_check: k must be at least 1");
  if (points.size() < 2) throw ContractError("vanishing_step_check: need at least two points");
  std::vector<double> x, y;
  for (const auto& p : points) {
    if (!(p.accuracy >= 1.0)) {
      throw ContractError("vanishing_step_check: accuracy " + real(p.accuracy) + " below 1 at step " +
                          std::to_string(p.t));
    }
    if (!(p.grad_norm > 0.0 && p.norm > 0.0)) {
      throw DegenerateError("vanishing_step_check: zero gradient or norm at step " + std::to_string(p.t));
    }
    x.push_back(p.norm);
    y.push_back(std::log(p.grad_norm) - (k - 1) * std::log(p.norm));
  }
  VanishingStepFit v;
  v.fit = fit_line(x, y);
  v.decaying = v.fit.slope < 0.0;
  return v;
}

// ---------------------------------------------------------------------------

Tensor fake_labels(const Tensor& logits, double a, WrongLabel policy, std::uint64_t seed) {
  if (!(a >= 0.0 && a <= 1.0)) throw ContractError("fake_labels: accuracy must be in [0, 1]");
  if (logits.shape().size() != 2 || logits.rows() == 0 || logits.cols() < 2) {
    throw ContractError("fake_labels: need at least one example and two classes");
  }
  const std::size_t n = logits.rows(), v = logits.cols();
  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<std::size_t> offset(1, v - 1);
  std::vector<std::size_t> shift(n);
  for (auto& s : shift) s = offset(rng);
  const auto correct = static_cast<std::size_t>(std::llround(a * static_cast<double>(n)));
  Tensor labels({n, v}, 0.0);
  for (std::size_t rank = 0; rank < n; ++rank) {
    const std::size_t i = order[rank];
    const std::size_t top = argmax_row(logits, i);
    std::size_t label = top;
    if (rank >= correct) {
      if (policy == WrongLabel::random_other) {
        label = (top + shift[i]) % v;
      } else {
        label = argmin_row(logits, i);
        if (label == top) label = (top + 1) % v;
      }
    }
    labels.at(i, label) = 1.0;
  }
  return labels;
}

EquilibriumScan equilibrium_norm_scan(const LabelledModel& model, const ParameterSet& theta0, double a,
                                      std::span<const double> c_grid, WrongLabel policy, std::uint64_t label_seed) {
  if (!(a >= 0.0 && a <= 1.0)) throw ContractError("equilibrium_norm_scan: accuracy must be in [0, 1]");
  if (c_grid.empty()) throw ContractError("equilibrium_norm_scan: empty scale grid");
  for (std::size_t i = 0; i < c_grid.size(); ++i) {
    if (!(c_grid[i] > 0.0) || (i > 0 && !(c_grid[i] > c_grid[i - 1]))) {
      throw ContractError("equilibrium_norm_scan: scale grid must be positive and increasing");
    }
  }
  EquilibriumScan scan;
  scan.a = a;
  const double rho0 = theta0.norm();
  for (double c : c_grid) {
    const ParameterSet theta = theta0.scaled(c);
    const Tensor labels = fake_labels(model.logits(theta), a, policy, label_seed);
    const GradProgram::Result r = model.loss(theta, labels);
    EquilibriumPoint p{c, c * rho0, theta.dot(r.grad)};
    scan.curve.push_back(p);
    if (!scan.rho_star && p.proj > 0.0) scan.rho_star = p.rho;
  }
  return scan;
}

// ---------------------------------------------------------------------------

GridResult scan_grid(std::span<const double> rows, std::span<const double> cols, std::size_t seeds,
                     std::uint64_t root_seed, const CellFunction& fn, std::size_t threads) {
  if (rows.empty() || cols.empty()) throw ContractError("scan_grid: empty axis");
  if (seeds == 0) throw ContractError("scan_grid: need at least one seed");
  GridResult g;
  g.rows.assign(rows.begin(), rows.end());
  g.cols.assign(cols.begin(), cols.end());
  const std::size_t cells = rows.size() * cols.size();
  std::vector<double> values(cells * seeds, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::string> errors(cells * seeds);
  parallel_for(cells * seeds, threads, [&](std::size_t job) {
    const std::size_t cell = job / seeds, s = job % seeds;
    try {
      values[job] = fn(rows[cell / cols.size()], cols[cell % cols.size()], split_seed(root_seed, s));
    } catch (const std::exception& e) {
      errors[job] = e.what();
    }
  });
  for (std::size_t cell = 0; cell < cells; ++cell) {
    ScanCell c;
    c.row = cell / cols.size();
    c.col = cell % cols.size();
    std::string first_error;
    for (std::size_t s = 0; s < seeds; ++s) {
      const std::size_t job = cell * seeds + s;
      if (errors[job].empty() && !std::isnan(values[job])) {
        c.samples.push_back(values[job]);
      } else if (first_error.empty()) {
        first_error = errors[job].empty() ? "NaN result" : errors[job];
      }
    }
    if (c.samples.empty()) {
      c.median = std::numeric_limits<double>::quiet_NaN();
      c.error = first_error;
    } else {
      c.median = median(c.samples);
    }
    g.cells.push_back(std::move(c));
  }
  return g;
}

std::string grid_csv(const GridResult& g, const std::string& row_name, const std::string& col_name) {
  std::string s = row_name + "\\" + col_name;
  for (double c : g.cols) s += "," + real(c);
  s += "\n";
  for (std::size_t r = 0; r < g.rows.size(); ++r) {
    s += real(g.rows[r]);
    for (std::size_t c = 0; c < g.cols.size(); ++c) s += "," + real(g.at(r, c).median);
    s += "\n";
  }
  return s;
}

}  // namespace normlab::dyn
