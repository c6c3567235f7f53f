#include <gtest/gtest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "normlab/error.hpp"
#include "normlab/harness.hpp"

using namespace normlab;
using namespace normlab::harness;
namespace fs = std::filesystem;

namespace {

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("normlab_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "normlab");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string expect_validation(std::string_view text) {
  try {
    parse_config(text);
  } catch (const ValidationError& e) {
    return e.what();
  }
  ADD_FAILURE() << "no ValidationError for " << text;
  return "";
}

constexpr const char* kSmallSweep = R"({"kind": "sweep", "n_layers": 1, "n_heads": 1, "d_model": 4, "d_ff": 8,
  "vocab_size": 4, "max_len": 4, "length": 4, "sequences": 4, "steps": 5, "seeds": 2,
  "eta_grid": [0.5], "lambda_grid": [0, 0.1]})";

}  // namespace

TEST(Config, KindsRoundTrip) {
  for (Kind k : kAllKinds) {
    EXPECT_EQ(parse_kind(kind_name(k)), k);
    const ExperimentConfig d = default_config(k);
    EXPECT_NO_THROW(d.validate()) << kind_name(k);
    const std::string text = config_json(d);
    EXPECT_EQ(config_json(parse_config(text)), text) << kind_name(k);
  }
  EXPECT_THROW(parse_kind("plot"), ValidationError);
}

TEST(Config, FieldsOverrideDefaults) {
  const ExperimentConfig c = parse_config(
      R"({"kind": "train", "d_model": 16, "n_heads": 2, "eta": 0.25, "norm_style": "post", "probe": "layers",
          "schedule": "inverse_sqrt", "generator": "markov", "order": 2, "vocab_size": 6, "seed": 12})");
  EXPECT_EQ(c.kind, Kind::train);
  EXPECT_EQ(c.model.d_model, 16u);
  EXPECT_EQ(c.model.n_heads, 2u);
  EXPECT_EQ(c.optimizer.eta0, 0.25);
  EXPECT_EQ(c.model.norm_style, tf::NormStyle::post);
  EXPECT_EQ(c.probe, sat::Probe::layers);
  EXPECT_EQ(c.optimizer.schedule, dyn::Schedule::inverse_sqrt);
  EXPECT_EQ(c.corpus.generator, data::Generator::markov);
  EXPECT_EQ(c.corpus.order, 2u);
  EXPECT_EQ(c.corpus.vocab, 6u);
  EXPECT_EQ(c.seed, 12u);
}

TEST(Config, FieldLevelErrors) {
  EXPECT_NE(expect_validation(R"({"kind": "projection", "c_grid": []})").find("c_grid"), std::string::npos);
  EXPECT_NE(expect_validation(R"({"kind": "train", "colour": 1})").find("colour: unknown field"), std::string::npos);
  EXPECT_NE(expect_validation(R"({"kind": "train", "eta": "fast"})").find("eta:"), std::string::npos);
  EXPECT_NE(expect_validation(R"({"kind": "train", "steps": -3})").find("steps:"), std::string::npos);
  EXPECT_NE(expect_validation(R"({"kind": "train", "norm_style": "mid"})").find("norm_style:"), std::string::npos);
  EXPECT_NE(expect_validation(R"({"kind": "train", "d_model": 30, "n_heads": 4})").find("model:"),
            std::string::npos);
  EXPECT_NE(expect_validation(R"({"kind": "projection", "v_grid": [1.5]})").find("v_grid"), std::string::npos);
  EXPECT_NE(expect_validation(R"({"kind": "equilibrium", "accuracy_grid": [1.2]})").find("accuracy_grid"),
            std::string::npos);
  EXPECT_NE(expect_validation(R"({"kind": "dynamics", "process": "drift"})").find("process"), std::string::npos);
  EXPECT_NE(expect_validation(R"({"kind": "train", "length": 64})").find("length"), std::string::npos);
  EXPECT_NE(expect_validation(R"({"kind": "teleport"})").find("kind"), std::string::npos);
  EXPECT_NE(expect_validation(R"({"steps": 3})").find("kind: missing"), std::string::npos);
  EXPECT_NE(expect_validation("[1, 2]").find("object"), std::string::npos);
  EXPECT_NE(expect_validation("{oops").find("JSON"), std::string::npos);
  EXPECT_THROW(parse_config(R"({"kind": "train"})", Kind::sweep), ValidationError);
  EXPECT_EQ(parse_config("{}", Kind::sweep).kind, Kind::sweep);
}

TEST(Manifest, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Manifest, JsonRoundTrips) {
  RunManifest m;
  m.kind = Kind::sweep;
  m.config_hash = sha256_hex("x");
  m.seed = 7;
  m.version = "1.2.3";
  m.wall_time_s = 0.5;
  m.files = {"a.csv", "b.json"};
  const std::string text = manifest_json(m);
  const auto j = nlohmann::json::parse(text);
  EXPECT_EQ(j["kind"], "sweep");
  EXPECT_EQ(j["seed"], 7);
  EXPECT_EQ(j["files"].size(), 2u);
  EXPECT_EQ(j.dump(2) + "\n", text);
}

TEST(Run, DynamicsWritesListedFiles) {
  const fs::path dir = scratch("dynamics");
  const std::string text = R"({"kind": "dynamics", "process": "misaligned", "steps": 2000})";
  const RunManifest m = run_experiment(parse_config(text), dir, text);
  EXPECT_EQ(m.files, (std::vector<std::string>{"config.json", "fit.json", "norms.csv"}));
  EXPECT_EQ(m.config_hash, sha256_hex(text));
  for (const auto& f : m.files) EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  const auto fit = nlohmann::json::parse(read(dir / "fit.json"));
  EXPECT_NEAR(fit["exponent"].get<double>(), 0.5, 0.02);
  const std::string csv = read(dir / "norms.csv");
  EXPECT_EQ(csv.rfind("t,log_norm\n", 0), 0u);
  EXPECT_EQ(csv.find('\r'), std::string::npos);
  EXPECT_EQ(parse_config(read(dir / "config.json")).steps, 2000u);
  fs::remove_all(dir);
}

TEST(Run, RerunIsByteIdentical) {
  const fs::path a = scratch("rerun_a"), b = scratch("rerun_b");
  ExperimentConfig cfg = parse_config(kSmallSweep);
  run_experiment(cfg, a, kSmallSweep);
  cfg.threads = 2;
  run_experiment(cfg, b, kSmallSweep);
  const std::string csv = read(a / "sweep.csv");
  EXPECT_EQ(csv.rfind("eta\\lambda,0,0.1\n", 0), 0u);
  EXPECT_EQ(csv, read(b / "sweep.csv"));
  const auto j = nlohmann::json::parse(read(a / "sweep.json"));
  EXPECT_EQ(j["cells"].size(), 2u);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Run, EveryKindRunsAtSmallScale) {
  const std::string model = R"("n_layers": 1, "n_heads": 1, "d_model": 4, "d_ff": 8, "vocab_size": 4,
    "max_len": 4, "length": 4, "sequences": 4)";
  const std::vector<std::pair<std::string, std::string>> cases{
      {"homogeneity", R"({"kind": "homogeneity", "seeds": 1, )" + model + "}"},
      {"saturation", R"({"kind": "saturation", "probe_inputs": 2, )" + model + "}"},
      {"train", R"({"kind": "train", "steps": 12, "warmup": 2, "probe_inputs": 2, )" + model + "}"},
      {"projection", R"({"kind": "projection", "v_grid": [2], "c_grid": [1], "seeds": 1, "batch": 2, )" + model + "}"},
      {"equilibrium", R"({"kind": "equilibrium", "accuracy_grid": [0.5], "c_grid": [1, 10], "examples": 8})"},
      {"normflow", R"({"kind": "normflow", "seeds": 1, "c_grid": [1, 2], )" + model + "}"},
  };
  for (const auto& [name, text] : cases) {
    const fs::path dir = scratch(name);
    const RunManifest m = run_experiment(parse_config(text), dir, text);
    EXPECT_GE(m.files.size(), 2u) << name;
    for (const auto& f : m.files) EXPECT_TRUE(fs::exists(dir / f)) << name << " " << f;
    fs::remove_all(dir);
  }
}

TEST(Run, NormflowColumns) {
  const fs::path dir = scratch("normflow_cols");
  const std::string text = R"({"kind": "normflow", "n_layers": 1, "n_heads": 1, "d_model": 4, "d_ff": 8,
    "vocab_size": 4, "max_len": 4, "length": 4, "sequences": 4, "seeds": 2, "c_grid": [1, 2, 4]})";
  run_experiment(parse_config(text), dir, text);
  std::istringstream csv(read(dir / "normflow.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "rho,proj,d_rho_dt,d_proj_dt");
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 6u);
  fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("cli");
  fs::create_directories(dir);
  std::ofstream(dir / "empty_grid.json") << R"({"kind": "projection", "c_grid": []})";
  std::ofstream(dir / "sweep.json") << kSmallSweep;

  EXPECT_EQ(cli({"projection", "--config", (dir / "empty_grid.json").string()}), 2);
  EXPECT_EQ(cli({"sweep", "--config", (dir / "missing.json").string()}), 2);
  EXPECT_EQ(cli({"teleport"}), 2);
  EXPECT_EQ(cli({}), 2);
  EXPECT_EQ(cli({"train", "--config", (dir / "sweep.json").string()}), 2);
  EXPECT_EQ(cli({"sweep", "--config", (dir / "sweep.json").string(), "--out", (dir / "run").string(), "--seed",
                 "5", "--threads", "1"}),
            0);
  const auto manifest = nlohmann::json::parse(read(dir / "run" / "manifest.json"));
  EXPECT_EQ(manifest["seed"], 5);
  EXPECT_EQ(manifest["config_hash"], sha256_hex(kSmallSweep));
  std::ofstream(dir / "blocker") << "x";
  EXPECT_EQ(cli({"sweep", "--config", (dir / "sweep.json").string(), "--out", (dir / "blocker" / "sub").string()}),
            1);
  fs::remove_all(dir);
}
