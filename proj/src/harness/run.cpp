#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "normlab/error.hpp"
#include "normlab/harness.hpp"
#include "normlab/parallel.hpp"

#ifndef NORMLAB_VERSION
#define NORMLAB_VERSION "0.0.0"
#endif

namespace normlab::harness {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kDefaultOut = "normlab-out";

std::string real(double v) { return fmt::format("{}", v); }

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Collects emitted files; every write goes through here.
class Emitter {
 public:
  explicit Emitter(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) throw std::runtime_error("cannot create output directory " + dir_.string());
  }

  void write(const std::string& name, const std::string& content) {
    const fs::path path = dir_ / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    out.close();
    if (!out) throw std::runtime_error("cannot write " + path.string());
    record(name);
  }

  void record(const std::string& name) { files_.push_back(name); }
  const fs::path& dir() const { return dir_; }
  std::vector<std::string> files() const {
    std::vector<std::string> f = files_;
    std::sort(f.begin(), f.end());
    return f;
  }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

json grid_json(const dyn::GridResult& g, const std::string& row_name, const std::string& col_name) {
  json j;
  j["row_name"] = row_name;
  j["col_name"] = col_name;
  j["rows"] = g.rows;
  j["cols"] = g.cols;
  j["cells"] = json::array();
  for (const auto& c : g.cells) {
    j["cells"].push_back({{"row", c.row}, {"col", c.col}, {"median", c.median}, {"samples", c.samples},
                          {"error", c.error}});
  }
  return j;
}

json fit_json(const dyn::GrowthFit& f) {
  return {{"law", f.law == dyn::GrowthLaw::power ? "power" : "exp_sqrt"},
          {"exponent", f.exponent},
          {"intercept", f.intercept},
          {"r2", f.r2},
          {"first", f.first},
          {"last", f.last}};
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

data::Corpus corpus_of(const ExperimentConfig& cfg) {
  data::CorpusSpec spec = cfg.corpus;
  spec.vocab = cfg.model.vocab_size;
  return data::synthetic_corpus(spec);
}

// ---------------------------------------------------------------------------

struct DegreeProbe {
  std::function<Tensor(const ParameterSet&)> f;
  ParameterSet theta;
};

void run_homogeneity(const ExperimentConfig& cfg, Emitter& out) {
  const bool transformer = cfg.source == "transformer";
  const homog::NetGraph g = transformer ? tf::to_netgraph(cfg.model, cfg.classifier)
                                        : homog::NetGraph::parse(read_text(cfg.source));
  const auto verdicts = homog::propagate_homogeneity(g);
  out.write("verdicts.json", homog::verdicts_json(g, verdicts) + "\n");

  std::string csv = "seed,c,k_hat\n";
  json estimates = json::array();
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    Rng rng(split_seed(cfg.seed, s));
    auto graph = std::make_shared<Graph>();
    auto inputs = std::make_shared<Inputs>();
    NodeId output = 0;
    ParameterSet theta;
    if (transformer) {
      const std::size_t len = std::min(cfg.corpus.length, cfg.model.max_len);
      const tf::EncoderNodes en = tf::build_encoder(*graph, cfg.model, len);
      output = en.output;
      theta = tf::init_params(cfg.model, rng);
      if (cfg.classifier) {
        tf::add_classifier(theta, cfg.model, cfg.model.vocab_size, rng);
        output = tf::classifier_logits(*graph, en.output, cfg.model.vocab_size);
      }
      std::uniform_int_distribution<int> tok(0, static_cast<int>(cfg.model.vocab_size) - 1);
      std::vector<int> tokens(len);
      for (auto& t : tokens) t = tok(rng);
      inputs->emplace(en.input, tf::one_hot(tokens, cfg.model.vocab_size));
    } else {
      const homog::CompiledNet net = homog::compile(g, cfg.batch);
      *graph = net.graph;
      output = net.output;
      for (const auto& name : net.inputs) {
        for (NodeId i = 0; i < graph->size(); ++i) {
          const Node& n = graph->node(i);
          if (n.op == Op::input && n.name == name) inputs->emplace(name, randn(n.shape, rng));
        }
      }
      theta = homog::init_params(net, rng);
    }
    const homog::VectorFunction f = [graph, inputs, output](const ParameterSet& p) {
      return eval_graph(*graph, output, *inputs, p);
    };
    const ParameterSet scaled = theta.scaled(cfg.init_scale);
    for (double c : cfg.c_grid) {
      const double k = homog::estimate_degree_empirical(f, scaled, c);
      csv += fmt::format("{},{},{}\n", s, real(c), real(k));
      estimates.push_back({{"seed", s}, {"c", c}, {"k_hat", k}});
    }
  }
  out.write("degree.csv", csv);
  json summary;
  summary["source"] = cfg.source;
  summary["output_verdict"] = homog::to_string(verdicts.at(g.output()));
  summary["init_scale"] = cfg.init_scale;
  summary["estimates"] = estimates;
  out.write("degree.json", dump(summary));
}

void run_saturation(const ExperimentConfig& cfg, Emitter& out) {
  ParameterSet theta;
  if (cfg.snapshot.empty()) {
    Rng rng(cfg.seed);
    theta = tf::init_params(cfg.model, rng).scaled(cfg.init_scale);
  } else {
    theta = tf::load_snapshot(cfg.snapshot);
  }
  const data::Corpus corpus = corpus_of(cfg);
  const std::size_t n = std::min(cfg.probe_inputs, corpus.inputs.size());
  const std::vector<std::vector<int>> inputs(corpus.inputs.begin(),
                                             corpus.inputs.begin() + static_cast<std::ptrdiff_t>(n));
  std::string csv = "c,layer,similarity\n";
  json reports = json::array();
  for (double c : cfg.c_grid) {
    const sat::SaturationReport r = sat::saturation_level(cfg.model, theta, inputs, c, cfg.probe);
    for (const auto& l : r.per_layer) csv += fmt::format("{},{},{}\n", real(c), l.layer, real(l.similarity));
    csv += fmt::format("{},overall,{}\n", real(c), real(r.overall));
    reports.push_back(json::parse(sat::report_json(r)));
  }
  out.write("saturation.csv", csv);
  out.write("saturation.json", dump(reports));
  const sat::HeadAttentionStats heads =
      sat::head_attention_stats(sat::collect_attention(cfg.model, theta, inputs), cfg.head_mass, cfg.model.causal_mask);
  out.write("heads.json", sat::head_stats_json(heads) + "\n");
  out.write("head_histogram.csv", sat::head_histogram_csv(heads));
}

void run_train(const ExperimentConfig& cfg, Emitter& out) {
  const dyn::TinyLm lm(cfg.model, corpus_of(cfg));
  dyn::TinyLmOptions opt;
  opt.optimizer = cfg.optimizer;
  opt.steps = cfg.steps;
  opt.stride = cfg.stride;
  opt.warmup = cfg.warmup;
  opt.saturation_c = cfg.saturation_c;
  opt.probe = cfg.probe;
  opt.probe_inputs = cfg.probe_inputs;
  opt.head_mass = cfg.head_mass;
  const dyn::TinyLmRun run = dyn::run_tiny_lm(lm, opt, cfg.seed);
  const auto& pts = run.train.points;
  out.write("trajectory.csv", dyn::trajectory_csv(pts));

  json s;
  s["steps_recorded"] = pts.size();
  s["diverged_at"] = run.train.diverged_at ? json(*run.train.diverged_at) : json(nullptr);
  s["zero_gradient_steps"] = run.train.zero_gradient_steps;
  s["growth_fraction"] = run.growth_fraction;
  s["initial"] = {{"loss", pts.front().loss}, {"accuracy", pts.front().accuracy}, {"norm", pts.front().norm}};
  s["final"] = {{"loss", pts.back().loss}, {"accuracy", pts.back().accuracy}, {"norm", pts.back().norm}};
  s["saturation_init"] = json::parse(sat::report_json(run.saturation_init));
  s["saturation_end"] = json::parse(sat::report_json(run.saturation_end));
  s["has_argmax_head"] = run.has_argmax_head;
  s["has_mean_head"] = run.has_mean_head;
  s["heads"] = json::parse(sat::head_stats_json(run.heads));
  out.write("summary.json", dump(s));
  out.write("head_histogram.csv", sat::head_histogram_csv(run.heads));
  tf::save_snapshot(run.train.final_params, out.dir() / "params");
  out.record("params.bin");
  out.record("params.json");
}

void run_dynamics(const ExperimentConfig& cfg, Emitter& out) {
  std::string csv;
  dyn::GrowthFit fit;
  if (cfg.process == "random_walk") {
    const dyn::GrowthLaw law = cfg.law == "exp_sqrt" ? dyn::GrowthLaw::exp_sqrt : dyn::GrowthLaw::power;
    const auto norms = dyn::simulate_random_walk(cfg.walk_dim, cfg.sigma, cfg.steps, cfg.seed);
    csv = "t,norm\n";
    for (std::size_t t = 0; t < norms.size(); ++t) csv += fmt::format("{},{}\n", t + 1, real(norms[t]));
    fit = dyn::fit_growth_law(norms, law);
  } else {
    const dyn::NormModel model = cfg.process == "aligned" ? dyn::NormModel::aligned : dyn::NormModel::misaligned;
    dyn::GrowthLaw law = model == dyn::NormModel::aligned ? dyn::GrowthLaw::exp_sqrt : dyn::GrowthLaw::power;
    if (cfg.law == "power") law = dyn::GrowthLaw::power;
    if (cfg.law == "exp_sqrt") law = dyn::GrowthLaw::exp_sqrt;
    const auto logs = dyn::simulate_norm_recurrence(model, cfg.optimizer, cfg.theta0, cfg.steps);
    csv = "t,log_norm\n";
    for (std::size_t t = 0; t < logs.size(); ++t) csv += fmt::format("{},{}\n", t + 1, real(logs[t]));
    fit = dyn::fit_growth_law_log(logs, law);
  }
  out.write("norms.csv", csv);
  json j = fit_json(fit);
  j["process"] = cfg.process;
  out.write("fit.json", dump(j));
}

void run_projection(const ExperimentConfig& cfg, Emitter& out) {
  dyn::ProjectionScanSpec spec;
  spec.model = cfg.model;
  spec.batch = cfg.batch;
  spec.length = cfg.corpus.length;
  spec.classifier_in_theta = cfg.classifier_in_theta;
  spec.embedding_in_theta = cfg.embedding_in_theta;
  spec.classifier_init = cfg.classifier_init;
  spec.classifier_gain = cfg.classifier_gain;
  const dyn::GridResult g =
      dyn::softmax_projection_scan(spec, cfg.v_grid, cfg.c_grid, cfg.seeds, cfg.seed, cfg.threads);
  out.write("projection.csv", dyn::grid_csv(g, "v", "c"));
  out.write("projection.json", dump(grid_json(g, "v", "c")));
}

void run_equilibrium(const ExperimentConfig& cfg, Emitter& out) {
  const dyn::SublayerModel m = dyn::feedforward_sublayer_model(cfg.sublayer, cfg.seed);
  const auto scans = dyn::equilibrium_curve(m, cfg.accuracy_grid, cfg.c_grid, cfg.wrong_label, cfg.seed);
  std::string csv = "a,c,rho,proj\n";
  json j = json::array();
  for (const auto& s : scans) {
    for (const auto& p : s.curve) csv += fmt::format("{},{},{},{}\n", real(s.a), real(p.c), real(p.rho), real(p.proj));
    j.push_back({{"a", s.a}, {"rho_star", s.rho_star ? json(*s.rho_star) : json(nullptr)}});
  }
  out.write("equilibrium.csv", csv);
  out.write("equilibrium.json", dump(j));
}

void run_sweep(const ExperimentConfig& cfg, Emitter& out) {
  dyn::SweepSpec spec;
  spec.model = cfg.model;
  spec.corpus = cfg.corpus;
  spec.corpus.vocab = cfg.model.vocab_size;
  spec.steps = cfg.steps;
  const dyn::GridResult g =
      dyn::weight_decay_sweep(spec, cfg.eta_grid, cfg.lambda_grid, cfg.seeds, cfg.seed, cfg.threads);
  out.write("sweep.csv", dyn::grid_csv(g, "eta", "lambda"));
  out.write("sweep.json", dump(grid_json(g, "eta", "lambda")));
}

void run_normflow(const ExperimentConfig& cfg, Emitter& out) {
  const dyn::TinyLm lm(cfg.model, corpus_of(cfg));
  const HvpProgram program(lm.lm().program().graph(), lm.lm().program().loss());
  const Inputs inputs = lm.lm().bind(lm.batch());
  const std::size_t nc = cfg.c_grid.size();
  std::vector<dyn::NormFlowPoint> points(cfg.seeds * nc);
  parallel_for(cfg.seeds, cfg.threads, [&](std::size_t s) {
    const ParameterSet theta = lm.init(split_seed(cfg.seed, s));
    for (std::size_t i = 0; i < nc; ++i) points[s * nc + i] = dyn::norm_flow_point(program, inputs, theta.scaled(cfg.c_grid[i]));
  });
  std::string csv = std::string(dyn::kNormFlowHeader) + "\n";
  for (const auto& p : points) {
    csv += fmt::format("{},{},{},{}\n", real(p.rho), real(p.proj), real(p.d_rho_dt), real(p.d_proj_dt));
  }
  out.write("normflow.csv", csv);
}

}  // namespace

std::string_view version() { return NORMLAB_VERSION; }

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest failed");
  }
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

std::string manifest_json(const RunManifest& m) {
  json j;
  j["kind"] = std::string(kind_name(m.kind));
  j["config_hash"] = m.config_hash;
  j["seed"] = m.seed;
  j["version"] = m.version;
  j["wall_time_s"] = m.wall_time_s;
  j["files"] = m.files;
  return dump(j);
}

RunManifest run_experiment(const ExperimentConfig& cfg, const fs::path& out, std::string_view config_bytes) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  Emitter em(out);
  try {
    switch (cfg.kind) {
      case Kind::homogeneity:
        run_homogeneity(cfg, em);
        break;
      case Kind::saturation:
        run_saturation(cfg, em);
        break;
      case Kind::train:
        run_train(cfg, em);
        break;
      case Kind::dynamics:
        run_dynamics(cfg, em);
        break;
      case Kind::projection:
        run_projection(cfg, em);
        break;
      case Kind::equilibrium:
        run_equilibrium(cfg, em);
        break;
      case Kind::sweep:
        run_sweep(cfg, em);
        break;
      case Kind::normflow:
        run_normflow(cfg, em);
        break;
    }
  } catch (const ValidationError&) {
    throw;
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string(kind_name(cfg.kind)) + ": " + e.what());
  }
  em.write("config.json", config_json(cfg));
  RunManifest m;
  m.kind = cfg.kind;
  m.config_hash = sha256_hex(config_bytes);
  m.seed = cfg.seed;
  m.version = std::string(version());
  m.files = em.files();
  m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::string manifest = manifest_json(m);
  std::ofstream f(out / "manifest.json", std::ios::binary | std::ios::trunc);
  f << manifest;
  f.close();
  if (!f) throw std::runtime_error("cannot write " + (out / "manifest.json").string());
  return m;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"normlab: parameter norm growth and saturation experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(version()));

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads, stride;
  for (Kind k : kAllKinds) {
    CLI::App* sub = app.add_subcommand(std::string(kind_name(k)), "run a " + std::string(kind_name(k)) + " experiment");
    sub->add_option("--config", config_path, "flat JSON config")->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory (default: config 'out', then $NORMLAB_OUT)");
    sub->add_option("--seed", seed, "root seed, overrides the config");
    sub->add_option("--threads", threads, "worker threads, 0 = all cores");
    sub->add_option("--stride", stride, "telemetry stride")->check(CLI::PositiveNumber);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  const Kind kind = parse_kind(app.get_subcommands().front()->get_name());

  ExperimentConfig cfg;
  std::string bytes;
  try {
    if (config_path.empty()) {
      cfg = default_config(kind);
      bytes = config_json(cfg);
    } else {
      bytes = read_text(config_path);
      cfg = parse_config(bytes, kind);
    }
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    if (stride) cfg.stride = *stride;
    if (!out_dir.empty()) {
      cfg.out = out_dir;
    } else if (cfg.out.empty()) {
      const char* env = std::getenv("NORMLAB_OUT");
      cfg.out = env && *env ? env : kDefaultOut;
    }
    cfg.validate();
  } catch (const std::exception& e) {
    std::cerr << "normlab: invalid config: " << e.what() << "\n";
    return 2;
  }

  try {
    const RunManifest m = run_experiment(cfg, cfg.out, bytes);
    std::cout << fmt::format("{}: wrote {} files to {} in {:.2f} s\n", kind_name(kind), m.files.size() + 1, cfg.out,
                             m.wall_time_s);
  } catch (const ValidationError& e) {
    std::cerr << "normlab: invalid config: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "normlab: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace normlab::harness
