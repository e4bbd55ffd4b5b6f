// Command-line front end over the C API.
//
// Exit codes: 0 success, 1 configuration or input error, 2 numeric divergence.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cst/cst_api.h"

namespace fs = std::filesystem;

namespace {

constexpr const char* kOutputRootEnv = "CST_OUTPUT_ROOT";

struct Failure {
  int code;
  std::string message;
};

int exit_code(cst_status status) { return status == CST_NUMERIC_ERROR ? 2 : 1; }

void check(cst_status status, const std::string& context) {
  if (status != CST_OK) throw Failure{exit_code(status), context + ": " + cst_last_error()};
}

fs::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? fs::path(env) : fs::path("results");
}

// Relative output paths land under the output root.
fs::path under_root(const std::string& path) {
  const fs::path p(path);
  return p.is_absolute() ? p : output_root() / p;
}

struct ConfigDeleter {
  void operator()(cst_config* c) const { cst_config_free(c); }
};
struct DatasetDeleter {
  void operator()(cst_dataset* d) const { cst_dataset_free(d); }
};
struct ModelDeleter {
  void operator()(cst_model* m) const { cst_model_free(m); }
};
using ConfigPtr = std::unique_ptr<cst_config, ConfigDeleter>;
using DatasetPtr = std::unique_ptr<cst_dataset, DatasetDeleter>;
using ModelPtr = std::unique_ptr<cst_model, ModelDeleter>;

ConfigPtr load_config(const std::string& path) {
  cst_config* c = nullptr;
  if (path.empty())
    check(cst_config_parse("", &c), "default config");
  else
    check(cst_config_load(path.c_str(), &c), path);
  return ConfigPtr(c);
}

DatasetPtr load_dataset(const std::string& path) {
  cst_dataset* d = nullptr;
  check(cst_dataset_load(path.c_str(), &d), path);
  return DatasetPtr(d);
}

std::string config_hash(const cst_config* c) {
  char hash[17];
  check(cst_config_hash(c, hash, sizeof hash), "config hash");
  return hash;
}

std::vector<std::string> dataset_labels(const cst_config* c) {
  std::vector<std::string> out;
  for (size_t i = 0; i < cst_config_dataset_count(c); ++i) {
    char label[256];
    check(cst_config_dataset_label(c, i, label, sizeof label), "dataset label");
    out.emplace_back(label);
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{1, "cannot open '" + path + "'"};
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string seed_dir(std::uint64_t seed) { return "seed" + std::to_string(seed); }

void print_progress(const char* message, void*) { std::fprintf(stderr, "%s\n", message); }

struct GenData {
  std::string config;
  std::string dataset;
  std::optional<std::uint64_t> seed;
  std::string out = "data";
};

void run_gen_data(const GenData& o) {
  auto config = load_config(o.config);
  auto labels = dataset_labels(config.get());
  if (!o.dataset.empty()) {
    if (std::find(labels.begin(), labels.end(), o.dataset) == labels.end())
      throw Failure{1, "dataset '" + o.dataset + "' is not produced by this config"};
    labels = {o.dataset};
  }
  std::vector<std::uint64_t> seeds;
  if (o.seed)
    seeds = {*o.seed};
  else
    for (size_t i = 0; i < cst_config_seed_count(config.get()); ++i) seeds.push_back(cst_config_seed(config.get(), i));

  const fs::path root = under_root(o.out);
  for (const auto& label : labels)
    for (auto seed : seeds) {
      cst_dataset *train = nullptr, *test = nullptr;
      check(cst_dataset_generate(config.get(), label.c_str(), seed, &train, &test), label);
      DatasetPtr tr(train), te(test);
      const fs::path dir = root / label / seed_dir(seed);
      check(cst_dataset_save(tr.get(), (dir / "train.txt").c_str()), (dir / "train.txt").string());
      check(cst_dataset_save(te.get(), (dir / "test.txt").c_str()), (dir / "test.txt").string());
      std::printf("%s\n", dir.c_str());
    }
}

struct Train {
  std::string config;
  std::string data;
  std::string backbone = "DM";
  std::string method = "PL+CVAT";
  std::uint64_t seed = 0;
  std::string out;
};

void run_train(const Train& o) {
  auto config = load_config(o.config);
  auto data = load_dataset(o.data);
  cst_model* m = nullptr;
  check(cst_train(config.get(), data.get(), o.backbone.c_str(), o.method.c_str(), o.seed, &m), "train");
  ModelPtr model(m);
  const std::string name = o.out.empty() ? "models/" + o.backbone + "_" + o.method + "_" + seed_dir(o.seed) + ".txt"
                                         : o.out;
  const fs::path path = under_root(name);
  check(cst_model_save(model.get(), path.c_str()), path.string());
  std::printf("model %s\nlambda %.17g\n", path.c_str(), cst_model_lambda(model.get()));
}

struct Evaluate {
  std::string model;
  std::string data;
};

void run_evaluate(const Evaluate& o) {
  cst_model* m = nullptr;
  check(cst_model_load(o.model.c_str(), &m), o.model);
  ModelPtr model(m);
  auto data = load_dataset(o.data);
  cst_metrics metrics{};
  check(cst_evaluate(model.get(), data.get(), &metrics), "evaluate");
  std::printf("nll %.17g\nhamming %.17g\nbest_action_accuracy %.17g\nfactual_nll %.17g\n", metrics.nll,
              metrics.hamming, metrics.best_action_accuracy, metrics.factual_nll);
}

struct Sweep {
  std::string config;
  std::size_t jobs = 0;
  std::string out;
  bool quiet = false;
};

void run_sweep(const Sweep& o) {
  auto config = load_config(o.config);
  if (o.jobs) check(cst_config_set_jobs(config.get(), o.jobs), "jobs");
  const std::string hash = config_hash(config.get());
  std::string name = o.out;
  if (name.empty()) {
    const std::string stem = o.config.empty() ? "default" : fs::path(o.config).stem().string();
    name = "sweeps/" + stem + "-" + hash;
  }
  const fs::path dir = under_root(name);
  std::size_t divergences = 0;
  const cst_status status =
      cst_run_experiment(config.get(), dir.c_str(), o.quiet ? nullptr : print_progress, nullptr, &divergences);
  if (status == CST_OK || status == CST_NUMERIC_ERROR) std::printf("results %s\nconfig_hash %s\n", dir.c_str(), hash.c_str());
  check(status, "sweep");
}

struct ToyDemo {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void run_toy_demo(const ToyDemo& o) {
  std::string text = o.config.empty() ? "" : read_file(o.config);
  if (o.seed) text += "\n[toy]\nseed = " + std::to_string(*o.seed) + "\n";
  const std::string name = o.out.empty() ? "toy/" + seed_dir(o.seed.value_or(0)) : o.out;
  const fs::path dir = under_root(name);
  cst_toy_summary s{};
  check(cst_toy_demo(text.c_str(), dir.c_str(), &s), "toy-demo");
  std::printf("results %s\n", dir.c_str());
  std::printf("dm accuracy A0 %.3f A1 %.3f\n", s.dm_accuracy[0], s.dm_accuracy[1]);
  std::printf("cst accuracy A0 %.3f A1 %.3f\n", s.final_accuracy[0], s.final_accuracy[1]);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual self-training: data generation, training, evaluation and sweeps.\n"
               "Relative output paths are resolved under $" +
               std::string(kOutputRootEnv) + " (default ./results)."};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cst_version()));

  GenData gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write the train/test datasets a config expands to");
  gen_cmd->add_option("-c,--config", gen.config, "Experiment config (INI)")->check(CLI::ExistingFile);
  gen_cmd->add_option("-d,--dataset", gen.dataset, "Only this dataset label (e.g. D1, D1-o2)");
  gen_cmd->add_option("-s,--seed", gen.seed, "Only this seed");
  gen_cmd->add_option("-o,--out", gen.out, "Output directory")->capture_default_str();

  Train train;
  auto* train_cmd = app.add_subcommand("train", "Fit one backbone/method on a saved training set");
  train_cmd->add_option("-c,--config", train.config, "Experiment config (INI)")->check(CLI::ExistingFile);
  train_cmd->add_option("--data", train.data, "Training dataset file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("-b,--backbone", train.backbone, "DM | HSIC | UDM")->capture_default_str();
  train_cmd->add_option("-m,--method", train.method, "Backbone | PL | PL+CVAT")->capture_default_str();
  train_cmd->add_option("-s,--seed", train.seed, "Seed")->capture_default_str();
  train_cmd->add_option("-o,--out", train.out, "Model checkpoint path");

  Evaluate eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a saved dataset");
  eval_cmd->add_option("--model", eval.model, "Model checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval.data, "Dataset file")->required()->check(CLI::ExistingFile);

  Sweep sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run datasets x backbones x methods x seeds and write CSVs");
  sweep_cmd->add_option("-c,--config", sweep.config, "Experiment config (INI)")->check(CLI::ExistingFile);
  sweep_cmd->add_option("-j,--jobs", sweep.jobs, "Worker threads (overrides the config)");
  sweep_cmd->add_option("-o,--out", sweep.out, "Output directory");
  sweep_cmd->add_flag("-q,--quiet", sweep.quiet, "No progress lines");

  ToyDemo toy;
  auto* toy_cmd = app.add_subcommand("toy-demo", "Two-moons illustration; writes plot-ready CSVs");
  toy_cmd->add_option("-c,--config", toy.config, "Config with a [toy] section")->check(CLI::ExistingFile);
  toy_cmd->add_option("-s,--seed", toy.seed, "Seed");
  toy_cmd->add_option("-o,--out", toy.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen_cmd) run_gen_data(gen);
    if (*train_cmd) run_train(train);
    if (*eval_cmd) run_evaluate(eval);
    if (*sweep_cmd) run_sweep(sweep);
    if (*toy_cmd) run_toy_demo(toy);
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s\n", f.message.c_str());
    return f.code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
