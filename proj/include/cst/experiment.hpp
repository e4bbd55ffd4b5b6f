#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "cst/backbones.hpp"
#include "cst/cst.hpp"
#include "cst/eval.hpp"
#include "cst/ingest.hpp"
#include "cst/synthdata.hpp"

namespace cst {

enum class Method { Backbone, PL, PLCVAT };
Method parse_method(const std::string& name);
std::string to_string(Method method);

struct DataConfig {
  enum class Source { Synthetic, Libsvm, Toy } source = Source::Synthetic;
  // synthetic
  std::vector<DemandKind> kinds{DemandKind::D1, DemandKind::D2, DemandKind::D3, DemandKind::D4, DemandKind::D5};
  std::size_t samples = 1000;
  std::size_t test_samples = 1000;
  LoggingPolicy::Kind logging = LoggingPolicy::Kind::Proportional;
  std::vector<double> overlaps{1.0};  // softmax logging only
  bool fold_ten = false;
  HForm h_form = HForm::Decaying;
  // libsvm
  std::string name = "multilabel";
  std::string train_file;
  std::string test_file;
  std::size_t num_features = 0;  // 0 = infer
  std::size_t num_labels = 0;    // 0 = infer
  LoggingPolicyConfig logging_model{};
  // toy
  double noise = 0.1;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DataConfig data{};
  std::vector<BackboneKind> backbones{BackboneKind::DM, BackboneKind::HSIC, BackboneKind::UDM};
  BackboneConfig backbone{};
  std::vector<Method> methods{Method::Backbone, Method::PL, Method::PLCVAT};
  CstConfig cst{};
  std::vector<double> lambda_grid{0.01, 0.1, 1.0, 10.0};  // one value = fixed lambda
  double validation_fraction = 0.2;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t jobs = 1;
};

// Defaults used by every entry point; the config text only overrides them.
ExperimentConfig default_experiment_config();
ExperimentConfig parse_experiment_config(std::string_view text);
void validate(const ExperimentConfig& config);

// Every resolved field in a fixed order; hashing this identifies a run.
std::string canonical_text(const ExperimentConfig& config);
std::string config_hash(const ExperimentConfig& config);

struct PerSeedRow {
  std::string dataset, backbone, method;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  RunMetrics metrics;
};

struct HistoryRow {
  std::string dataset, backbone, method;
  std::uint64_t seed = 0;
  std::string phase;  // backbone | cst
  std::size_t outer = 0, epoch = 0;
  double loss = 0.0, cvat_loss = 0.0;
  std::size_t relabelled = 0;
};

struct ExperimentResult {
  std::string config_hash;
  std::vector<PerSeedRow> rows;        // sorted
  std::vector<MetricsReport> reports;  // sorted by (dataset, backbone, method)
  std::vector<HistoryRow> history;     // sorted
  std::vector<std::string> divergences;  // jobs that stopped on a numeric error
};

using ProgressFn = std::function<void(const std::string&)>;

ExperimentResult run_experiment(const ExperimentConfig& config, const ProgressFn& progress = {});

// per_seed.csv, aggregate.csv, history.csv in `dir` (created if needed).
void write_results(const ExperimentResult& result, const std::filesystem::path& dir);

struct GeneratedData {
  BanditDataset train, test;
};

// The train/test pair a sweep job sees for dataset `label` under `seed`.
GeneratedData generate_datasets(const ExperimentConfig& config, const std::string& label, std::uint64_t seed);

struct TrainedModel {
  MlpModel model;
  double lambda = 0.0;
};

// One (backbone, method) fit on `full_train` with the same validation split
// and random streams a sweep job uses.
TrainedModel train_single(const ExperimentConfig& config, const BanditDataset& full_train, BackboneKind kind,
                          Method method, std::uint64_t seed);

std::string csv_field(std::string_view text);

/// Labels of all datasets the config expands to, in run order.
std::vector<std::string> dataset_labels(const ExperimentConfig& config);

}  // namespace cst
