#include <json.hpp>

#include <cmath>
#include <initializer_list>
#include <set>
#include <utility>

#include "normlab/error.hpp"
#include "normlab/harness.hpp"

namespace normlab::harness {

namespace {

using json = nlohmann::json;

template <typename E>
struct EnumField {
  E& value;
  std::initializer_list<std::pair<const char*, E>> names;
};

template <typename E>
EnumField<E> enumeration(E& value, std::initializer_list<std::pair<const char*, E>> names) {
  return {value, names};
}

// One list of fields drives both reading and writing.
template <typename V>
void visit_fields(ExperimentConfig& c, V& v) {
  v("seed", c.seed);
  v("threads", c.threads);
  v("stride", c.stride);
  v("out", c.out);

  v("n_layers", c.model.n_layers);
  v("n_heads", c.model.n_heads);
  v("d_model", c.model.d_model);
  v("d_ff", c.model.d_ff);
  v("vocab_size", c.model.vocab_size);
  v("max_len", c.model.max_len);
  v("norm_style", enumeration(c.model.norm_style, {{"pre", tf::NormStyle::pre}, {"post", tf::NormStyle::post}}));
  v("biases", c.model.biases);
  v("causal_mask", c.model.causal_mask);
  v("ln_gain", c.model.ln_gain);
  v("positional", c.model.positional);
  v("embedding_sd", c.model.embedding_sd);

  v("optimizer", enumeration(c.optimizer.kind, {{"gd", dyn::OptimizerKind::gd},
                                                {"gd_weight_decay", dyn::OptimizerKind::gd_weight_decay},
                                                {"norm_sgd", dyn::OptimizerKind::norm_sgd}}));
  v("eta", c.optimizer.eta0);
  v("schedule", enumeration(c.optimizer.schedule, {{"constant", dyn::Schedule::constant},
                                                   {"inverse_sqrt", dyn::Schedule::inverse_sqrt}}));
  v("lambda", c.optimizer.lambda);
  v("step_magnitude", c.optimizer.step_magnitude);
  v("steps", c.steps);

  v("generator", enumeration(c.corpus.generator, {{"uniform", data::Generator::uniform},
                                                  {"markov", data::Generator::markov},
                                                  {"copy", data::Generator::copy}}));
  v("length", c.corpus.length);
  v("sequences", c.corpus.sequences);
  v("order", c.corpus.order);
  v("offset", c.corpus.offset);
  v("sharpness", c.corpus.sharpness);
  v("data_seed", c.corpus.seed);
  v("seeds", c.seeds);

  v("c_grid", c.c_grid);
  v("v_grid", c.v_grid);
  v("eta_grid", c.eta_grid);
  v("lambda_grid", c.lambda_grid);
  v("accuracy_grid", c.accuracy_grid);

  v("source", c.source);
  v("classifier", c.classifier);
  v("init_scale", c.init_scale);

  v("probe", enumeration(c.probe, {{"layers", sat::Probe::layers}, {"heads", sat::Probe::heads}}));
  v("probe_inputs", c.probe_inputs);
  v("head_mass", c.head_mass);
  v("saturation_c", c.saturation_c);
  v("warmup", c.warmup);
  v("snapshot", c.snapshot);

  v("process", c.process);
  v("walk_dim", c.walk_dim);
  v("sigma", c.sigma);
  v("theta0", c.theta0);
  v("law", c.law);

  v("batch", c.batch);
  v("classifier_in_theta", c.classifier_in_theta);
  v("embedding_in_theta", c.embedding_in_theta);
  v("classifier_init", enumeration(c.classifier_init, {{"fan_in", dyn::ClassifierInit::fan_in},
                                                       {"glorot", dyn::ClassifierInit::glorot},
                                                       {"fan_out", dyn::ClassifierInit::fan_out}}));
  v("classifier_gain", c.classifier_gain);

  v("sublayer_d_model", c.sublayer.d_model);
  v("sublayer_d_ff", c.sublayer.d_ff);
  v("examples", c.sublayer.examples);
  v("classes", c.sublayer.classes);
  v("wrong_label", enumeration(c.wrong_label, {{"random_other", dyn::WrongLabel::random_other},
                                               {"argmin", dyn::WrongLabel::argmin}}));
}

std::string field(const char* key) { return std::string(key) + ": "; }

struct Reader {
  const json& j;
  std::set<std::string> seen;

  const json* find(const char* key) {
    const auto it = j.find(key);
    if (it == j.end()) return nullptr;
    seen.insert(key);
    return &*it;
  }

  void operator()(const char* key, std::size_t& x) {
    const json* v = find(key);
    if (!v) return;
    if (v->is_number_unsigned()) {
      x = v->get<std::size_t>();
    } else {
      throw ValidationError(field(key) + "expected a nonnegative integer, got " + v->dump());
    }
  }
  void operator()(const char* key, double& x) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_number()) throw ValidationError(field(key) + "expected a number, got " + v->dump());
    x = v->get<double>();
  }
  void operator()(const char* key, bool& x) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_boolean()) throw ValidationError(field(key) + "expected true or false, got " + v->dump());
    x = v->get<bool>();
  }
  void operator()(const char* key, std::string& x) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_string()) throw ValidationError(field(key) + "expected a string, got " + v->dump());
    x = v->get<std::string>();
  }
  void operator()(const char* key, std::vector<double>& x) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_array()) throw ValidationError(field(key) + "expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : *v) {
      if (!e.is_number()) throw ValidationError(field(key) + "expected an array of numbers, got " + e.dump());
      out.push_back(e.get<double>());
    }
    x = std::move(out);
  }
  template <typename E>
  void operator()(const char* key, EnumField<E> f) {
    const json* v = find(key);
    if (!v) return;
    std::string options;
    for (const auto& [name, value] : f.names) {
      if (v->is_string() && v->get<std::string>() == name) {
        f.value = value;
        return;
      }
      options += (options.empty() ? "" : ", ") + std::string(name);
    }
    throw ValidationError(field(key) + "expected one of " + options + ", got " + v->dump());
  }
};

struct Writer {
  json& j;

  template <typename T>
  void operator()(const char* key, T& x) {
    j[key] = x;
  }
  template <typename E>
  void operator()(const char* key, EnumField<E> f) {
    for (const auto& [name, value] : f.names) {
      if (value == f.value) j[key] = name;
    }
  }
};

void require(bool ok, const char* key, const std::string& what) {
  if (!ok) throw ValidationError(field(key) + what);
}

void require_grid(const std::vector<double>& g, const char* key) {
  require(!g.empty(), key, "must be nonempty");
  for (double v : g) require(std::isfinite(v), key, "entries must be finite");
}

bool uses_corpus(Kind k) {
  return k == Kind::saturation || k == Kind::train || k == Kind::sweep || k == Kind::normflow ||
         k == Kind::projection;
}

}  // namespace

std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::homogeneity:
      return "homogeneity";
    case Kind::saturation:
      return "saturation";
    case Kind::train:
      return "train";
    case Kind::dynamics:
      return "dynamics";
    case Kind::projection:
      return "projection";
    case Kind::equilibrium:
      return "equilibrium";
    case Kind::sweep:
      return "sweep";
    case Kind::normflow:
      return "normflow";
  }
  return "?";
}

Kind parse_kind(std::string_view name) {
  for (Kind k : kAllKinds) {
    if (kind_name(k) == name) return k;
  }
  throw ValidationError("kind: unknown experiment kind '" + std::string(name) + "'");
}

ExperimentConfig default_config(Kind kind) {
  ExperimentConfig c;
  c.kind = kind;
  switch (kind) {
    case Kind::homogeneity:
      c.c_grid = {10.0};
      break;
    case Kind::saturation:
      c.c_grid = {1.0, 10.0, 100.0, 1000.0};
      c.init_scale = 1.0;
      break;
    case Kind::train:
      c.c_grid = {1000.0};
      break;
    case Kind::dynamics:
      c.optimizer = dyn::OptimizerSpec{dyn::OptimizerKind::gd, 1.0, dyn::Schedule::inverse_sqrt};
      c.steps = 10000;
      break;
    case Kind::projection:
      c.c_grid = {1.0, 3.0, 10.0, 100.0};
      c.seeds = 10;
      break;
    case Kind::equilibrium:
      c.c_grid = dyn::log_space(1.0, 1e4, 60);
      break;
    case Kind::sweep:
      c.steps = 100;
      break;
    case Kind::normflow:
      c.c_grid = dyn::log_space(0.25, 4.0, 9);
      break;
  }
  if (c.c_grid.empty()) c.c_grid = {1.0};
  c.corpus.vocab = c.model.vocab_size;
  return c;
}

ExperimentConfig parse_config(std::string_view text, std::optional<Kind> expected) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config: not valid JSON (") + e.what() + ")");
  }
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  std::optional<Kind> kind = expected;
  if (const auto it = j.find("kind"); it != j.end()) {
    if (!it->is_string()) throw ValidationError("kind: expected a string");
    const Kind named = parse_kind(it->get<std::string>());
    if (expected && named != *expected) {
      throw ValidationError("kind: config is for '" + std::string(kind_name(named)) + "' but '" +
                            std::string(kind_name(*expected)) + "' was requested");
    }
    kind = named;
  }
  if (!kind) throw ValidationError("kind: missing");

  ExperimentConfig c = default_config(*kind);
  Reader r{j, {"kind"}};
  visit_fields(c, r);
  for (const auto& [key, value] : j.items()) {
    if (!r.seen.contains(key)) throw ValidationError(key + ": unknown field");
  }
  c.corpus.vocab = c.model.vocab_size;
  c.validate();
  return c;
}

std::string config_json(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  json j = json::object();
  j["kind"] = std::string(kind_name(c.kind));
  Writer w{j};
  visit_fields(c, w);
  return j.dump(2) + "\n";
}

void ExperimentConfig::validate() const {
  try {
    model.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("model: ") + e.what());
  }
  optimizer.validate();
  require(steps >= 1, "steps", "must be at least 1");
  require(stride >= 1, "stride", "must be at least 1");
  require(seeds >= 1, "seeds", "must be at least 1");
  require(corpus.vocab == model.vocab_size, "vocab_size", "corpus vocabulary must match the model");
  if (uses_corpus(kind)) {
    corpus.validate();
    require(corpus.length <= model.max_len, "length", "exceeds max_len");
  }

  switch (kind) {
    case Kind::homogeneity:
      require_grid(c_grid, "c_grid");
      for (double c : c_grid) require(c > 1.0, "c_grid", "scales must exceed 1");
      require(init_scale > 0.0, "init_scale", "must be positive");
      require(!source.empty(), "source", "must be 'transformer' or a NetGraph file path");
      break;
    case Kind::saturation:
      require_grid(c_grid, "c_grid");
      for (double c : c_grid) require(c >= 1.0, "c_grid", "scales must be at least 1");
      require(init_scale > 0.0, "init_scale", "must be positive");
      require(probe_inputs >= 1, "probe_inputs", "must be at least 1");
      require(head_mass > 0.0 && head_mass < 1.0, "head_mass", "must be in (0, 1)");
      break;
    case Kind::train:
      require(probe_inputs >= 1, "probe_inputs", "must be at least 1");
      require(head_mass > 0.0 && head_mass < 1.0, "head_mass", "must be in (0, 1)");
      require(saturation_c >= 1.0, "saturation_c", "must be at least 1");
      require(warmup + 1 < steps, "warmup", "must leave at least two steps");
      break;
    case Kind::dynamics:
      require(process == "random_walk" || process == "aligned" || process == "misaligned", "process",
              "expected one of random_walk, aligned, misaligned");
      require(law.empty() || law == "power" || law == "exp_sqrt", "law", "expected power or exp_sqrt");
      require(steps >= 100, "steps", "a growth fit needs at least 100 steps");
      require(walk_dim >= 1, "walk_dim", "must be at least 1");
      require(sigma >= 0.0, "sigma", "must be nonnegative");
      require(theta0 > 0.0, "theta0", "must be positive");
      break;
    case Kind::projection:
      require_grid(c_grid, "c_grid");
      require_grid(v_grid, "v_grid");
      for (double c : c_grid) require(c > 0.0, "c_grid", "scales must be positive");
      for (double v : v_grid) require(v >= 2.0 && v == std::floor(v), "v_grid", "class counts must be integers >= 2");
      require(batch >= 1, "batch", "must be at least 1");
      require(classifier_gain > 0.0, "classifier_gain", "must be positive");
      break;
    case Kind::equilibrium:
      require_grid(c_grid, "c_grid");
      require_grid(accuracy_grid, "accuracy_grid");
      for (double c : c_grid) require(c > 0.0, "c_grid", "scales must be positive");
      for (double a : accuracy_grid) require(a >= 0.0 && a <= 1.0, "accuracy_grid", "accuracies must be in [0, 1]");
      require(sublayer.d_model >= 2, "sublayer_d_model", "must be at least 2");
      require(sublayer.d_ff >= 1, "sublayer_d_ff", "must be at least 1");
      require(sublayer.examples >= 1, "examples", "must be at least 1");
      require(sublayer.classes >= 2, "classes", "must be at least 2");
      break;
    case Kind::sweep:
      require_grid(eta_grid, "eta_grid");
      require_grid(lambda_grid, "lambda_grid");
      for (double e : eta_grid) require(e > 0.0, "eta_grid", "learning rates must be positive");
      for (double l : lambda_grid) require(l >= 0.0, "lambda_grid", "decay rates must be nonnegative");
      break;
    case Kind::normflow:
      require_grid(c_grid, "c_grid");
      for (double c : c_grid) require(c > 0.0, "c_grid", "scales must be positive");
      break;
  }
}

}  // namespace normlab::harness
