#include "normlab/experiments.hpp"

#include <cmath>
#include <random>

#include "normlab/error.hpp"
#include "normlab/random.hpp"

namespace normlab::dyn {

namespace {

constexpr double kNormTolerance = 1e-12;

ParameterSet with_classifier(const tf::TransformerConfig& cfg, std::size_t classes, Rng& rng) {
  ParameterSet p = tf::init_params(cfg, rng);
  tf::add_classifier(p, cfg, classes, rng);
  return p;
}

double classifier_sd(ClassifierInit init, std::size_t d, std::size_t classes) {
  switch (init) {
    case ClassifierInit::fan_in:
      return 1.0 / std::sqrt(static_cast<double>(d));
    case ClassifierInit::glorot:
      return std::sqrt(2.0 / static_cast<double>(d + classes));
    case ClassifierInit::fan_out:
      return 1.0 / std::sqrt(static_cast<double>(classes));
  }
  return 1.0;
}

}  // namespace

TinyLm::TinyLm(const tf::TransformerConfig& cfg, const data::Corpus& corpus) : cfg_(cfg) {
  cfg_.validate();
  if (corpus.inputs.empty()) throw ContractError("TinyLm: empty corpus");
  if (corpus.vocab != cfg_.vocab_size) {
    throw ContractError("TinyLm: corpus vocabulary " + std::to_string(corpus.vocab) + " differs from model vocab " +
                        std::to_string(cfg_.vocab_size));
  }
  const std::size_t length = corpus.inputs.front().size();
  if (length > cfg_.max_len) throw ContractError("TinyLm: sequences longer than max_len");
  batch_.inputs = corpus.inputs;
  batch_.targets = corpus.targets;
  lm_ = std::make_shared<const tf::LmObjective>(cfg_, batch_.inputs.size(), length, cfg_.vocab_size);
}

ParameterSet TinyLm::init(std::uint64_t seed) const {
  Rng rng(seed);
  return with_classifier(cfg_, cfg_.vocab_size, rng);
}

Objective TinyLm::objective() const {
  Objective obj;
  auto lm = lm_;
  auto inputs = std::make_shared<const Inputs>(lm->bind(batch_));
  auto batch = batch_;
  obj.value_and_grad = [lm, inputs](const ParameterSet& th) { return lm->program().value_and_grad(*inputs, th); };
  obj.accuracy = [lm, batch](const ParameterSet& th) { return lm->accuracy(batch, th); };
  obj.measured = [](const ParameterSet& th) { return tf::weight_groups(th); };
  return obj;
}

double growth_fraction(std::span<const TrajectoryPoint> points, std::size_t warmup) {
  std::size_t pairs = 0, grew = 0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i - 1].t <= warmup) continue;
    ++pairs;
    grew += points[i].norm > points[i - 1].norm;
  }
  if (pairs == 0) throw ContractError("growth_fraction: no steps after warm-up");
  return static_cast<double>(grew) / static_cast<double>(pairs);
}

TinyLmRun run_tiny_lm(const TinyLm& lm, const TinyLmOptions& opt, std::uint64_t seed) {
  const ParameterSet theta0 = lm.init(seed);
  const std::size_t n = std::min(opt.probe_inputs, lm.batch().inputs.size());
  const std::vector<std::vector<int>> probe(lm.batch().inputs.begin(),
                                            lm.batch().inputs.begin() + static_cast<std::ptrdiff_t>(n));
  TinyLmRun run;
  run.saturation_init = sat::saturation_level(lm.config(), theta0, probe, opt.saturation_c, opt.probe);
  run.train = train_and_record(lm.objective(), theta0, opt.optimizer, opt.steps, opt.stride);
  run.growth_fraction = growth_fraction(run.train.points, opt.warmup);
  run.saturation_end =
      sat::saturation_level(lm.config(), run.train.final_params, probe, opt.saturation_c, opt.probe);
  run.heads = sat::head_attention_stats(sat::collect_attention(lm.config(), run.train.final_params, probe),
                                        opt.head_mass, lm.config().causal_mask);
  for (const auto& h : run.heads.heads) {
    run.has_argmax_head |= h.classification == sat::HeadClass::argmax_like;
    run.has_mean_head |= h.classification == sat::HeadClass::mean_like;
  }
  return run;
}

// ---------------------------------------------------------------------------

double softmax_projection_cell(const ProjectionScanSpec& spec, std::size_t classes, double c, std::uint64_t seed) {
  if (classes < 2) throw ContractError("softmax_projection_cell: need at least two classes");
  if (!(c > 0.0)) throw ContractError("softmax_projection_cell: scale must be positive");
  const tf::TransformerConfig& cfg = spec.model;
  Rng rng(seed);
  ParameterSet theta = tf::init_params(cfg, rng);
  theta.add("cls", randn({cfg.d_model, classes}, rng, spec.classifier_gain * classifier_sd(spec.classifier_init, cfg.d_model, classes)));
  std::uniform_int_distribution<int> token(0, static_cast<int>(cfg.vocab_size) - 1);
  std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
  tf::Batch b;
  for (std::size_t i = 0; i < spec.batch; ++i) {
    std::vector<int> x(spec.length), y(spec.length);
    for (auto& t : x) t = token(rng);
    for (auto& t : y) t = label(rng);
    b.inputs.push_back(std::move(x));
    b.targets.push_back(std::move(y));
  }
  ParameterSet scaled;
  for (const auto& [name, t] : theta.groups()) {
    const bool fixed = name == "cls" && !spec.classifier_in_theta;
    Tensor v = t;
    if (!fixed) {
      for (double& e : v.data()) e *= c;
    }
    scaled.add(name, std::move(v));
  }
  const tf::LmObjective lm(cfg, spec.batch, spec.length, classes);
  const GradProgram::Result r = lm.program().value_and_grad(lm.bind(b), scaled);
  auto keep = [&](const std::string& name, const Tensor&) {
    if (name == "cls") return spec.classifier_in_theta;
    if (name == "emb" || name == "pos") return spec.embedding_in_theta;
    return true;
  };
  return cosine(scaled.filtered(keep), r.grad.filtered(keep));
}

GridResult softmax_projection_scan(const ProjectionScanSpec& spec, std::span<const double> classes,
                                   std::span<const double> scales, std::size_t seeds, std::uint64_t root_seed,
                                   std::size_t threads) {
  return scan_grid(
      classes, scales, seeds, root_seed,
      [&spec](double v, double c, std::uint64_t seed) {
        return softmax_projection_cell(spec, static_cast<std::size_t>(std::llround(v)), c, seed);
      },
      threads);
}

// ---------------------------------------------------------------------------

double weight_decay_cell(const SweepSpec& spec, double eta, double lambda, std::uint64_t seed) {
  const TinyLm lm(spec.model, data::synthetic_corpus(spec.corpus));
  const OptimizerSpec opt{OptimizerKind::gd_weight_decay, eta, Schedule::constant, lambda};
  const TrainResult r = train_and_record(lm.objective(), lm.init(seed), opt, spec.steps, spec.steps);
  if (r.diverged_at) throw NumericError("weight_decay_cell: diverged at step " + std::to_string(*r.diverged_at));
  return tf::weight_groups(r.final_params).norm() / r.points.front().norm;
}

GridResult weight_decay_sweep(const SweepSpec& spec, std::span<const double> etas, std::span<const double> lambdas,
                              std::size_t seeds, std::uint64_t root_seed, std::size_t threads) {
  return scan_grid(
      etas, lambdas, seeds, root_seed,
      [&spec](double eta, double lambda, std::uint64_t seed) { return weight_decay_cell(spec, eta, lambda, seed); },
      threads);
}

// ---------------------------------------------------------------------------

SublayerModel feedforward_sublayer_model(const SublayerSpec& spec, std::uint64_t seed) {
  if (spec.d_model < 2 || spec.d_ff == 0 || spec.examples == 0 || spec.classes < 2) {
    throw ContractError("feedforward_sublayer_model: degenerate spec");
  }
  Rng rng(seed);
  const std::size_t d = spec.d_model, h = spec.d_ff, v = spec.classes;
  const Tensor x = randn({spec.examples, d}, rng);
  const Tensor map = randn({d, v}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
  SublayerModel m;
  m.theta0.add("wi", randn({d, h}, rng, 1.0 / std::sqrt(static_cast<double>(d))));
  m.theta0.add("wf", randn({h, d}, rng, 1.0 / std::sqrt(static_cast<double>(h))));
  m.theta0.add("g", Tensor({1, d}, 1.0));

  auto graph = std::make_shared<Graph>();
  Graph& g = *graph;
  const NodeId hid = g.relu(g.matmul(g.constant(x), g.param("wi", {d, h})));
  const NodeId z = g.layer_norm(g.matmul(hid, g.param("wf", {h, d})), kNormTolerance);
  const NodeId out = g.mul(z, g.broadcast_rows(g.param("g", {1, d}), spec.examples));
  const NodeId logits = g.matmul(out, g.constant(map));
  const NodeId labels = g.input("y", {spec.examples, v});
  auto program = std::make_shared<const GradProgram>(g, g.mean_all(g.softmax_ce(logits, labels)));

  m.model.logits = [graph, logits](const ParameterSet& th) { return eval_graph(*graph, logits, {}, th); };
  m.model.loss = [program](const ParameterSet& th, const Tensor& y) {
    Inputs in;
    in.emplace("y", y);
    return program->value_and_grad(in, th);
  };
  return m;
}

std::vector<EquilibriumScan> equilibrium_curve(const SublayerModel& m, std::span<const double> accuracies,
                                               std::span<const double> c_grid, WrongLabel policy,
                                               std::uint64_t label_seed) {
  std::vector<EquilibriumScan> out;
  for (double a : accuracies) out.push_back(equilibrium_norm_scan(m.model, m.theta0, a, c_grid, policy, label_seed));
  return out;
}

std::vector<double> log_space(double lo, double hi, std::size_t n) {
  if (!(lo > 0.0 && hi >= lo) || n == 0) throw ContractError("log_space: need 0 < lo <= hi and n >= 1");
  std::vector<double> v;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    v.push_back(lo * std::pow(hi / lo, f));
  }
  return v;
}

}  // namespace normlab::dyn
