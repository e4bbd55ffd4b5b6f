#include "cst/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "cst/config.hpp"
#include "cst/error.hpp"

namespace cst {

Method parse_method(const std::string& name) {
  if (name == "Backbone") return Method::Backbone;
  if (name == "PL") return Method::PL;
  if (name == "PL+CVAT") return Method::PLCVAT;
  throw ConfigError("unknown method '" + name + "' (expected Backbone, PL or PL+CVAT)");
}

std::string to_string(Method method) {
  switch (method) {
    case Method::Backbone:
      return "Backbone";
    case Method::PL:
      return "PL";
    case Method::PLCVAT:
      return "PL+CVAT";
  }
  return "?";
}

namespace {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

std::string optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

void read_train(IniDocument& doc, const std::string& section, TrainConfig& t) {
  t.epochs = doc.get_size(section, "epochs", t.epochs);
  t.batch_size = doc.get_size(section, "batch_size", t.batch_size);
  t.adam.learning_rate = doc.get_double(section, "learning_rate", t.adam.learning_rate);
  t.optimizer = parse_optimizer(doc.get_string(section, "optimizer", optimizer_name(t.optimizer)));
}

template <class T, class F>
std::string join(const std::vector<T>& items, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    out += fmt(items[i]);
  }
  return out;
}

std::uint64_t label_stream(const std::string& label) { return std::stoull(fnv1a_hex(label), nullptr, 16); }

}  // namespace

ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  c.backbone.train = {.epochs = 300, .batch_size = 64, .adam = {.learning_rate = 1e-3}};
  c.cst.outer_iterations = 2;
  c.cst.train = {.epochs = 1, .batch_size = 64, .adam = {.learning_rate = 2e-2}};
  return c;
}

ExperimentConfig parse_experiment_config(std::string_view text) {
  auto doc = IniDocument::parse(text);
  ExperimentConfig c = default_experiment_config();

  c.name = doc.get_string("experiment", "name", c.name);
  {
    std::vector<std::size_t> seeds(c.seeds.begin(), c.seeds.end());
    seeds = doc.get_sizes("experiment", "seeds", seeds);
    c.seeds.assign(seeds.begin(), seeds.end());
  }
  c.jobs = doc.get_size("experiment", "jobs", c.jobs);
  c.validation_fraction = doc.get_double("experiment", "validation_fraction", c.validation_fraction);
  {
    std::vector<std::string> names;
    for (auto b : c.backbones) names.push_back(to_string(b));
    c.backbones.clear();
    for (const auto& n : doc.get_list("experiment", "backbones", names)) c.backbones.push_back(parse_backbone_kind(n));
    names.clear();
    for (auto m : c.methods) names.push_back(to_string(m));
    c.methods.clear();
    for (const auto& n : doc.get_list("experiment", "methods", names)) c.methods.push_back(parse_method(n));
  }

  auto& d = c.data;
  const std::string source = doc.get_string("data", "source", "synthetic");
  if (source == "synthetic")
    d.source = DataConfig::Source::Synthetic;
  else if (source == "libsvm")
    d.source = DataConfig::Source::Libsvm;
  else if (source == "toy")
    d.source = DataConfig::Source::Toy;
  else
    throw ConfigError("unknown data source '" + source + "' (expected synthetic, libsvm or toy)");
  {
    std::vector<std::string> names;
    for (auto k : d.kinds) names.push_back(to_string(k));
    d.kinds.clear();
    for (const auto& n : doc.get_list("data", "kinds", names)) d.kinds.push_back(parse_demand_kind(n));
  }
  if (d.source == DataConfig::Source::Toy) {
    d.samples = 50;
    d.test_samples = 500;
  }
  d.samples = doc.get_size("data", "samples", d.samples);
  d.test_samples = doc.get_size("data", "test_samples", d.test_samples);
  const std::string logging = doc.get_string("data", "logging", "proportional");
  if (logging == "proportional")
    d.logging = LoggingPolicy::Kind::Proportional;
  else if (logging == "softmax")
    d.logging = LoggingPolicy::Kind::Softmax;
  else
    throw ConfigError("unknown logging policy '" + logging + "' (expected proportional or softmax)");
  d.overlaps = doc.get_doubles("data", "overlap", d.overlaps);
  d.fold_ten = doc.get_bool("data", "fold_ten", d.fold_ten);
  const std::string h_form = doc.get_string("data", "h_form", "decaying");
  if (h_form == "decaying")
    d.h_form = HForm::Decaying;
  else if (h_form == "growing")
    d.h_form = HForm::Growing;
  else
    throw ConfigError("unknown h_form '" + h_form + "' (expected decaying or growing)");
  d.name = doc.get_string("data", "name", d.name);
  d.train_file = doc.get_string("data", "train_file", d.train_file);
  d.test_file = doc.get_string("data", "test_file", d.test_file);
  d.num_features = doc.get_size("data", "num_features", d.num_features);
  d.num_labels = doc.get_size("data", "num_labels", d.num_labels);
  d.logging_model.fraction = doc.get_double("data", "logging_fraction", d.logging_model.fraction);
  d.logging_model.temperature = doc.get_double("data", "logging_temperature", d.logging_model.temperature);
  d.logging_model.epochs = doc.get_size("data", "logging_epochs", d.logging_model.epochs);
  d.noise = doc.get_double("data", "noise", d.noise);

  auto& b = c.backbone;
  b.network.hidden = doc.get_sizes("backbone", "hidden", b.network.hidden);
  b.network.dropout = doc.get_double("backbone", "dropout", b.network.dropout);
  b.network.dropout_from = doc.get_size("backbone", "dropout_from", b.network.dropout_from);
  b.network.leaky_slope = doc.get_double("backbone", "leaky_slope", b.network.leaky_slope);
  read_train(doc, "backbone", b.train);
  b.hsic_lambda = doc.get_double("backbone", "hsic_lambda", b.hsic_lambda);
  b.rbf_sigma = doc.get_double("backbone", "rbf_sigma", b.rbf_sigma);
  b.embedding_layer = doc.get_size("backbone", "embedding_layer", b.embedding_layer);
  b.propensity_floor = doc.get_double("backbone", "propensity_floor", b.propensity_floor);
  b.propensity_train.epochs = doc.get_size("backbone", "propensity_epochs", b.propensity_train.epochs);
  b.propensity_train.adam.learning_rate =
      doc.get_double("backbone", "propensity_learning_rate", b.propensity_train.adam.learning_rate);

  auto& s = c.cst;
  s.outer_iterations = doc.get_size("cst", "outer_iterations", s.outer_iterations);
  read_train(doc, "cst", s.train);
  s.reimpute_every = doc.get_size("cst", "reimpute_every", s.reimpute_every);
  s.frozen_base = doc.get_bool("cst", "frozen_base", s.frozen_base);
  c.lambda_grid = doc.get_doubles("cst", "lambda", c.lambda_grid);
  s.cvat.xi = doc.get_double("cst", "xi", s.cvat.xi);
  s.cvat.power_iters = doc.get_size("cst", "power_iters", s.cvat.power_iters);
  s.cvat.epsilon = doc.get_double("cst", "epsilon", s.cvat.epsilon);

  doc.finish();
  validate(c);
  return c;
}

void validate(const ExperimentConfig& c) {
  if (c.name.empty() || c.name.find_first_of("/\\") != std::string::npos)
    throw ConfigError("experiment.name must be a plain, non-empty file name");
  if (c.seeds.empty()) throw ConfigError("experiment.seeds is empty");
  if (c.jobs == 0) throw ConfigError("experiment.jobs must be at least 1");
  if (c.backbones.empty() || c.methods.empty()) throw ConfigError("backbones and methods must be non-empty");
  const bool cvat = std::find(c.methods.begin(), c.methods.end(), Method::PLCVAT) != c.methods.end();
  if (cvat && c.lambda_grid.empty()) throw ConfigError("PL+CVAT needs a lambda value or grid");
  for (double l : c.lambda_grid)
    if (!(l > 0.0)) throw ConfigError("cst.lambda values must be positive");
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0))
    throw ConfigError("experiment.validation_fraction must lie in [0, 1)");
  if (cvat && c.lambda_grid.size() > 1 && c.validation_fraction == 0.0)
    throw ConfigError("lambda grid search needs a validation_fraction above 0");
  const auto& d = c.data;
  if (d.samples == 0) throw ConfigError("data.samples must be positive");
  switch (d.source) {
    case DataConfig::Source::Synthetic:
      if (d.kinds.empty()) throw ConfigError("data.kinds is empty");
      if (d.test_samples == 0) throw ConfigError("data.test_samples must be positive");
      for (double o : d.overlaps)
        if (o < 0.0) throw ConfigError("data.overlap must be nonnegative");
      break;
    case DataConfig::Source::Libsvm:
      for (const auto* path : {&d.train_file, &d.test_file}) {
        if (path->empty()) throw ConfigError("libsvm data needs data.train_file and data.test_file");
        if (!std::filesystem::exists(*path)) throw ConfigError("data file '" + *path + "' does not exist");
      }
      break;
    case DataConfig::Source::Toy:
      if (d.test_samples == 0) throw ConfigError("data.test_samples must be positive");
      if (d.noise < 0.0) throw ConfigError("data.noise must be nonnegative");
      break;
  }
  if (c.backbone.network.hidden.empty()) throw ConfigError("backbone.hidden needs at least one layer");
  for (auto w : c.backbone.network.hidden)
    if (w == 0) throw ConfigError("backbone.hidden widths must be positive");
  if (!(c.backbone.network.dropout >= 0.0 && c.backbone.network.dropout < 1.0))
    throw ConfigError("backbone.dropout must lie in [0, 1)");
  if (c.backbone.train.epochs == 0) throw ConfigError("backbone.epochs must be positive");
  for (const auto* lr : {&c.backbone.train.adam.learning_rate, &c.cst.train.adam.learning_rate})
    if (!(*lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(c.cst.cvat.xi > 0.0 && c.cst.cvat.epsilon > 0.0)) throw ConfigError("cst.xi and cst.epsilon must be positive");
  const bool hsic = std::find(c.backbones.begin(), c.backbones.end(), BackboneKind::HSIC) != c.backbones.end();
  if (hsic && c.backbone.embedding_layer >= c.backbone.network.hidden.size())
    throw ConfigError("backbone.embedding_layer must index a hidden layer");
}

std::string canonical_text(const ExperimentConfig& c) {
  std::ostringstream o;
  auto num = [](double v) { return format_double(v); };
  auto size = [](std::size_t v) { return std::to_string(v); };
  const auto& d = c.data;
  o << "name=" << c.name << "\n";
  o << "seeds=" << join(c.seeds, [](std::uint64_t s) { return std::to_string(s); }) << "\n";
  o << "validation_fraction=" << num(c.validation_fraction) << "\n";
  o << "backbones=" << join(c.backbones, [](BackboneKind k) { return to_string(k); }) << "\n";
  o << "methods=" << join(c.methods, [](Method m) { return to_string(m); }) << "\n";
  o << "data.source=" << static_cast<int>(d.source) << "\n";
  switch (d.source) {
    case DataConfig::Source::Synthetic:
      o << "data.kinds=" << join(d.kinds, [](DemandKind k) { return to_string(k); }) << "\n";
      o << "data.test_samples=" << d.test_samples << "\n";
      o << "data.logging=" << static_cast<int>(d.logging) << "\n";
      o << "data.overlap=" << join(d.overlaps, num) << "\n";
      o << "data.fold_ten=" << d.fold_ten << "\n";
      o << "data.h_form=" << static_cast<int>(d.h_form) << "\n";
      break;
    case DataConfig::Source::Libsvm:
      o << "data.name=" << d.name << "\ndata.train_file=" << d.train_file << "\ndata.test_file=" << d.test_file << "\n";
      o << "data.num_features=" << d.num_features << "\ndata.num_labels=" << d.num_labels << "\n";
      o << "data.logging_fraction=" << num(d.logging_model.fraction)
        << "\ndata.logging_temperature=" << num(d.logging_model.temperature)
        << "\ndata.logging_epochs=" << d.logging_model.epochs
        << "\ndata.logging_learning_rate=" << num(d.logging_model.learning_rate) << "\n";
      break;
    case DataConfig::Source::Toy:
      o << "data.test_samples=" << d.test_samples << "\ndata.noise=" << num(d.noise) << "\n";
      break;
  }
  o << "data.samples=" << d.samples << "\n";
  const auto& b = c.backbone;
  auto train = [&](const char* prefix, const TrainConfig& t) {
    o << prefix << ".epochs=" << t.epochs << "\n"
      << prefix << ".batch_size=" << t.batch_size << "\n"
      << prefix << ".optimizer=" << optimizer_name(t.optimizer) << "\n"
      << prefix << ".learning_rate=" << num(t.adam.learning_rate) << "\n"
      << prefix << ".adam=" << num(t.adam.beta1) << "," << num(t.adam.beta2) << "," << num(t.adam.epsilon) << "\n";
  };
  o << "backbone.hidden=" << join(b.network.hidden, size) << "\n";
  o << "backbone.dropout=" << num(b.network.dropout) << "\nbackbone.dropout_from=" << b.network.dropout_from
    << "\nbackbone.leaky_slope=" << num(b.network.leaky_slope) << "\n";
  train("backbone", b.train);
  o << "backbone.hsic_lambda=" << num(b.hsic_lambda) << "\nbackbone.rbf_sigma=" << num(b.rbf_sigma)
    << "\nbackbone.embedding_layer=" << b.embedding_layer << "\nbackbone.propensity_floor=" << num(b.propensity_floor)
    << "\n";
  train("backbone.propensity", b.propensity_train);
  const auto& s = c.cst;
  o << "cst.outer_iterations=" << s.outer_iterations << "\n";
  train("cst", s.train);
  o << "cst.reimpute_every=" << s.reimpute_every << "\ncst.frozen_base=" << s.frozen_base << "\n";
  o << "cst.lambda=" << join(c.lambda_grid, num) << "\n";
  o << "cst.cvat=" << num(s.cvat.xi) << "," << s.cvat.power_iters << "," << num(s.cvat.epsilon) << "\n";
  return o.str();
}

std::string config_hash(const ExperimentConfig& config) { return fnv1a_hex(canonical_text(config)); }

namespace {

struct DatasetJob {
  std::string label;
  DemandKind kind = DemandKind::D1;
  double overlap = 1.0;
};

struct LoadedMultiLabel {
  MultiLabelDataset train, test;
};

std::vector<DatasetJob> expand_datasets(const ExperimentConfig& c) {
  std::vector<DatasetJob> out;
  const auto& d = c.data;
  switch (d.source) {
    case DataConfig::Source::Synthetic:
      for (auto kind : d.kinds) {
        if (d.logging == LoggingPolicy::Kind::Softmax) {
          for (double o : d.overlaps) out.push_back({to_string(kind) + "-o" + format_double(o), kind, o});
        } else {
          out.push_back({to_string(kind), kind, 1.0});
        }
      }
      break;
    case DataConfig::Source::Libsvm:
      out.push_back({d.name});
      break;
    case DataConfig::Source::Toy:
      out.push_back({"toy"});
      break;
  }
  return out;
}

struct JobOutput {
  std::vector<PerSeedRow> rows;
  std::vector<HistoryRow> history;
  std::string divergence;
};

std::pair<BanditDataset, BanditDataset> make_data(const ExperimentConfig& c, const DatasetJob& job,
                                                  const LoadedMultiLabel* multilabel, Prng& rng) {
  const auto& d = c.data;
  switch (d.source) {
    case DataConfig::Source::Synthetic: {
      auto spec = make_demand_spec(job.kind, rng, d.h_form);
      LoggingPolicy policy{d.logging, job.overlap, d.fold_ten};
      auto train = sample_bandit_dataset(spec, d.samples, policy, rng);
      auto test = sample_bandit_dataset(spec, d.test_samples, policy, rng);
      return {std::move(train), std::move(test)};
    }
    case DataConfig::Source::Libsvm: {
      auto policy = fit_logging_policy(multilabel->train, d.logging_model, rng);
      auto train = convert_to_bandit(multilabel->train, policy, rng);
      auto test = convert_to_bandit(multilabel->test, policy, rng);
      return {std::move(train), std::move(test)};
    }
    case DataConfig::Source::Toy: {
      auto train = toy_bandit(two_moons(d.samples, d.noise, rng), rng);
      auto test = toy_bandit(two_moons(d.test_samples, d.noise, rng), rng);
      return {std::move(train), std::move(test)};
    }
  }
  throw ConfigError("unknown data source");
}

struct TrainSplit {
  BanditDataset train, validation;
};

TrainSplit split_for_training(const ExperimentConfig& c, const BanditDataset& full_train, const Prng& root) {
  Prng split_rng = root.split(0x5311);
  std::vector<std::size_t> fit_rows, val_rows;
  if (c.validation_fraction > 0.0) {
    std::tie(fit_rows, val_rows) = split_indices(full_train.size(), c.validation_fraction, split_rng);
  } else {
    fit_rows.resize(full_train.size());
    for (std::size_t i = 0; i < fit_rows.size(); ++i) fit_rows[i] = i;
  }
  return {subset(full_train, fit_rows), val_rows.empty() ? BanditDataset{} : subset(full_train, val_rows)};
}

BackboneResult fit_backbone(const ExperimentConfig& c, const BanditDataset& train, BackboneKind kind,
                            const Prng& root) {
  BackboneConfig bc = c.backbone;
  bc.kind = kind;
  Prng rng = root.split(0xB0 + static_cast<std::uint64_t>(kind));
  return train_backbone(train, bc, rng);
}

bool wants_cvat(const ExperimentConfig& c) {
  return std::find(c.methods.begin(), c.methods.end(), Method::PLCVAT) != c.methods.end();
}

double choose_lambda(const ExperimentConfig& c, const MlpModel& dm, const TrainSplit& split, const Prng& root) {
  Prng rng = root.split(0x1A);
  return select_lambda(dm, split.train, split.validation, c.lambda_grid, c.cst, rng).lambda;
}

CstResult fit_cst(const ExperimentConfig& c, const MlpModel& backbone, const BanditDataset& train, BackboneKind kind,
                  Method method, double lambda, const Prng& root) {
  CstConfig cc = c.cst;
  cc.lambda_cvat = method == Method::PLCVAT ? lambda : 0.0;
  Prng rng = root.split(0xC0 + 16 * static_cast<std::uint64_t>(kind) + static_cast<std::uint64_t>(method));
  return cst_train(backbone, train, cc, rng);
}

JobOutput run_job(const ExperimentConfig& c, const DatasetJob& job, std::uint64_t seed,
                  const LoadedMultiLabel* multilabel, const ProgressFn& progress) {
  JobOutput out;
  const Prng root(seed);
  Prng data_rng = root.split(label_stream(job.label));
  auto [full_train, test] = make_data(c, job, multilabel, data_rng);
  const TrainSplit split = split_for_training(c, full_train, root);

  auto note = [&](const std::string& what) {
    if (progress) progress(job.label + " seed " + std::to_string(seed) + ": " + what);
  };
  auto add_row = [&](BackboneKind kind, Method method, double lambda, const MlpModel& model) {
    out.rows.push_back({job.label, to_string(kind), to_string(method), seed, lambda, evaluate(model, test)});
  };
  auto add_history = [&](BackboneKind kind, Method method, const CstResult& res) {
    for (const auto& h : res.history)
      out.history.push_back({job.label, to_string(kind), to_string(method), seed, "cst", h.outer + 1, h.epoch + 1,
                             h.cst_loss, h.cvat_loss, h.relabelled});
  };

  try {
    std::map<BackboneKind, MlpModel> backbones;
    auto backbone_for = [&](BackboneKind kind) -> const MlpModel& {
      auto it = backbones.find(kind);
      if (it != backbones.end()) return it->second;
      note("training " + to_string(kind));
      auto fit = fit_backbone(c, split.train, kind, root);
      for (std::size_t e = 0; e < fit.epoch_losses.size(); ++e)
        out.history.push_back({job.label, to_string(kind), "Backbone", seed, "backbone", 0, e + 1,
                               fit.epoch_losses[e], 0.0, 0});
      return backbones.emplace(kind, std::move(fit.model)).first->second;
    };

    double lambda = c.lambda_grid.empty() ? 0.0 : c.lambda_grid.front();
    if (wants_cvat(c) && c.lambda_grid.size() > 1) {
      note("selecting lambda");
      lambda = choose_lambda(c, backbone_for(BackboneKind::DM), split, root);
    }

    for (auto kind : c.backbones) {
      const MlpModel& bb = backbone_for(kind);
      for (auto method : c.methods) {
        if (method == Method::Backbone) {
          add_row(kind, method, 0.0, bb);
          continue;
        }
        note(to_string(method) + " on " + to_string(kind));
        auto res = fit_cst(c, bb, split.train, kind, method, lambda, root);
        add_history(kind, method, res);
        add_row(kind, method, method == Method::PLCVAT ? lambda : 0.0, res.model);
      }
    }
  } catch (const NumericError& e) {
    out.divergence = job.label + " seed " + std::to_string(seed) + ": " + e.what();
  }
  return out;
}

std::optional<LoadedMultiLabel> load_multilabel(const ExperimentConfig& config) {
  if (config.data.source != DataConfig::Source::Libsvm) return std::nullopt;
  LibsvmOptions opts{config.data.num_features, config.data.num_labels};
  LoadedMultiLabel m;
  m.train = load_libsvm_multilabel(config.data.train_file, opts);
  opts.num_features = m.train.features.cols();
  opts.num_labels = m.train.num_labels;
  m.test = load_libsvm_multilabel(config.data.test_file, opts);
  return m;
}

std::string metric_value(double v) { return format_double(v); }

}  // namespace

std::vector<std::string> dataset_labels(const ExperimentConfig& config) {
  std::vector<std::string> out;
  for (const auto& j : expand_datasets(config)) out.push_back(j.label);
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const ProgressFn& progress) {
  validate(config);
  ExperimentResult result;
  result.config_hash = config_hash(config);

  const auto multilabel = load_multilabel(config);

  const auto datasets = expand_datasets(config);
  std::vector<std::pair<const DatasetJob*, std::uint64_t>> jobs;
  for (const auto& d : datasets)
    for (auto seed : config.seeds) jobs.emplace_back(&d, seed);

  std::vector<JobOutput> outputs(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto locked_progress = [&](const std::string& msg) {
    if (!progress) return;
    std::lock_guard lock(mu);
    progress(msg);
  };
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
      try {
        outputs[j] = run_job(config, *jobs[j].first, jobs[j].second, multilabel ? &*multilabel : nullptr,
                             locked_progress);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next.store(jobs.size());
      }
    }
  };
  const std::size_t threads = std::min(config.jobs, jobs.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  for (auto& o : outputs) {
    result.rows.insert(result.rows.end(), o.rows.begin(), o.rows.end());
    result.history.insert(result.history.end(), o.history.begin(), o.history.end());
    if (!o.divergence.empty()) result.divergences.push_back(o.divergence);
  }
  std::sort(result.rows.begin(), result.rows.end(), [](const PerSeedRow& a, const PerSeedRow& b) {
    return std::tie(a.dataset, a.backbone, a.method, a.seed) < std::tie(b.dataset, b.backbone, b.method, b.seed);
  });
  std::stable_sort(result.history.begin(), result.history.end(), [](const HistoryRow& a, const HistoryRow& b) {
    return std::tie(a.dataset, a.backbone, a.method, a.seed) < std::tie(b.dataset, b.backbone, b.method, b.seed);
  });
  std::sort(result.divergences.begin(), result.divergences.end());

  for (std::size_t i = 0; i < result.rows.size();) {
    std::size_t j = i;
    std::vector<RunMetrics> runs;
    while (j < result.rows.size() && result.rows[j].dataset == result.rows[i].dataset &&
           result.rows[j].backbone == result.rows[i].backbone && result.rows[j].method == result.rows[i].method)
      runs.push_back(result.rows[j++].metrics);
    result.reports.push_back(aggregate(result.rows[i].dataset, result.rows[i].backbone, result.rows[i].method,
                                       result.config_hash, std::move(runs)));
    i = j;
  }
  return result;
}

GeneratedData generate_datasets(const ExperimentConfig& config, const std::string& label, std::uint64_t seed) {
  validate(config);
  const auto jobs = expand_datasets(config);
  auto job = std::find_if(jobs.begin(), jobs.end(), [&](const DatasetJob& j) { return j.label == label; });
  if (job == jobs.end()) throw ConfigError("dataset '" + label + "' is not part of this configuration");
  const auto multilabel = load_multilabel(config);
  Prng data_rng = Prng(seed).split(label_stream(label));
  auto [train, test] = make_data(config, *job, multilabel ? &*multilabel : nullptr, data_rng);
  return {std::move(train), std::move(test)};
}

TrainedModel train_single(const ExperimentConfig& config, const BanditDataset& full_train, BackboneKind kind,
                          Method method, std::uint64_t seed) {
  validate(config);
  validate(full_train);
  const Prng root(seed);
  const TrainSplit split = split_for_training(config, full_train, root);
  auto backbone = fit_backbone(config, split.train, kind, root);
  if (method == Method::Backbone) return {std::move(backbone.model), 0.0};

  double lambda = config.lambda_grid.empty() ? 0.0 : config.lambda_grid.front();
  if (method == Method::PLCVAT && wants_cvat(config) && config.lambda_grid.size() > 1) {
    const MlpModel dm =
        kind == BackboneKind::DM ? backbone.model : fit_backbone(config, split.train, BackboneKind::DM, root).model;
    lambda = choose_lambda(config, dm, split, root);
  }
  auto res = fit_cst(config, backbone.model, split.train, kind, method, lambda, root);
  return {std::move(res.model), method == Method::PLCVAT ? lambda : 0.0};
}

std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (char ch : text) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

void write_results(const ExperimentResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot write " + (dir / name).string());
    return f;
  };
  const std::string hash = csv_field(r.config_hash);
  {
    auto f = open("per_seed.csv");
    f << "dataset,backbone,method,seed,lambda,nll,hamming,best_action_accuracy,config_hash\n";
    for (const auto& row : r.rows)
      f << csv_field(row.dataset) << ',' << row.backbone << ',' << row.method << ',' << row.seed << ','
        << metric_value(row.lambda) << ',' << metric_value(row.metrics.nll) << ',' << metric_value(row.metrics.hamming)
        << ',' << metric_value(row.metrics.best_action_accuracy) << ',' << hash << '\n';
  }
  {
    auto f = open("aggregate.csv");
    f << "dataset,backbone,method,metric,mean,stderr,seeds,config_hash\n";
    for (const auto& rep : r.reports) {
      const std::pair<const char*, const MetricSummary*> metrics[] = {
          {"nll", &rep.nll}, {"hamming", &rep.hamming}, {"best_action_accuracy", &rep.best_action_accuracy}};
      for (const auto& [name, m] : metrics)
        f << csv_field(rep.dataset) << ',' << rep.backbone << ',' << rep.method << ',' << name << ','
          << metric_value(m->mean) << ',' << metric_value(m->std_error) << ',' << rep.per_seed.size() << ',' << hash
          << '\n';
    }
  }
  {
    auto f = open("history.csv");
    f << "dataset,backbone,method,seed,phase,outer,epoch,loss,cvat_loss,relabelled,config_hash\n";
    for (const auto& h : r.history)
      f << csv_field(h.dataset) << ',' << h.backbone << ',' << h.method << ',' << h.seed << ',' << h.phase << ','
        << h.outer << ',' << h.epoch << ',' << metric_value(h.loss) << ',' << metric_value(h.cvat_loss) << ','
        << h.relabelled << ',' << hash << '\n';
  }
}

}  // namespace cst
