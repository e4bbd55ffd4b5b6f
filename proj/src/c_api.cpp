#include "cst/cst_api.h"

#include <cmath>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <string>

#include "cst/config.hpp"
#include "cst/error.hpp"
#include "cst/eval.hpp"
#include "cst/experiment.hpp"
#include "cst/toy_demo.hpp"

struct cst_config {
  cst::ExperimentConfig config;
  std::vector<std::string> labels;
  std::string hash;
};

struct cst_dataset {
  cst::BanditDataset data;
};

struct cst_model {
  cst::MlpModel model;
  std::map<std::string, std::string> header;
  double lambda = 0.0;
};

namespace {

thread_local std::string last_error;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

cst_status fail(cst_status status, const std::string& message) {
  last_error = message;
  return status;
}

template <class F>
cst_status guard(F&& body) {
  try {
    body();
    return CST_OK;
  } catch (const cst::NumericError& e) {
    return fail(CST_NUMERIC_ERROR, e.what());
  } catch (const cst::ConfigError& e) {
    return fail(CST_CONFIG_ERROR, e.what());
  } catch (const IoError& e) {
    return fail(CST_IO_ERROR, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(CST_IO_ERROR, e.what());
  } catch (const std::bad_alloc&) {
    return fail(CST_INTERNAL_ERROR, "out of memory");
  } catch (const std::exception& e) {
    return fail(CST_INTERNAL_ERROR, e.what());
  } catch (...) {
    return fail(CST_INTERNAL_ERROR, "unknown error");
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw cst::ConfigError(what);
}

void copy_out(const std::string& text, char* out, std::size_t capacity) {
  require(out != nullptr && capacity > text.size(), "output buffer too small");
  std::memcpy(out, text.c_str(), text.size() + 1);
}

cst_config* make_config(cst::ExperimentConfig config) {
  cst::validate(config);
  auto* handle = new cst_config{std::move(config), {}, {}};
  handle->labels = cst::dataset_labels(handle->config);
  handle->hash = cst::config_hash(handle->config);
  return handle;
}

std::ofstream open_for_write(const char* path) {
  require(path != nullptr, "null path");
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError(std::string("cannot write '") + path + "'");
  return out;
}

std::ifstream open_for_read(const char* path) {
  require(path != nullptr, "null path");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw cst::ConfigError(std::string("cannot open '") + path + "'");
  return in;
}

}  // namespace

extern "C" {

const char* cst_last_error(void) { return last_error.c_str(); }

const char* cst_version(void) { return "1.0.0"; }

cst_status cst_config_parse(const char* text, cst_config** out) {
  return guard([&] {
    require(text && out, "null argument");
    *out = make_config(cst::parse_experiment_config(text));
  });
}

cst_status cst_config_load(const char* path, cst_config** out) {
  return guard([&] {
    require(path && out, "null argument");
    *out = make_config(cst::parse_experiment_config(cst::read_text_file(path)));
  });
}

void cst_config_free(cst_config* config) { delete config; }

cst_status cst_config_hash(const cst_config* config, char* out, size_t capacity) {
  return guard([&] {
    require(config, "null config");
    copy_out(config->hash, out, capacity);
  });
}

cst_status cst_config_canonical(const cst_config* config, char* out, size_t capacity, size_t* needed) {
  return guard([&] {
    require(config, "null config");
    const auto text = cst::canonical_text(config->config);
    if (needed) *needed = text.size() + 1;
    if (out) copy_out(text, out, capacity);
  });
}

size_t cst_config_dataset_count(const cst_config* config) { return config ? config->labels.size() : 0; }

cst_status cst_config_dataset_label(const cst_config* config, size_t index, char* out, size_t capacity) {
  return guard([&] {
    require(config && index < config->labels.size(), "dataset index out of range");
    copy_out(config->labels[index], out, capacity);
  });
}

size_t cst_config_seed_count(const cst_config* config) { return config ? config->config.seeds.size() : 0; }

uint64_t cst_config_seed(const cst_config* config, size_t index) {
  return config && index < config->config.seeds.size() ? config->config.seeds[index] : 0;
}

cst_status cst_config_set_jobs(cst_config* config, size_t jobs) {
  return guard([&] {
    require(config, "null config");
    require(jobs > 0, "jobs must be at least 1");
    config->config.jobs = jobs;
  });
}

cst_status cst_dataset_generate(const cst_config* config, const char* label, uint64_t seed, cst_dataset** train,
                                cst_dataset** test) {
  return guard([&] {
    require(config && label && train && test, "null argument");
    auto pair = cst::generate_datasets(config->config, label, seed);
    *train = new cst_dataset{std::move(pair.train)};
    *test = new cst_dataset{std::move(pair.test)};
  });
}

cst_status cst_dataset_load(const char* path, cst_dataset** out) {
  return guard([&] {
    require(out, "null argument");
    auto in = open_for_read(path);
    *out = new cst_dataset{cst::load_dataset(in)};
  });
}

cst_status cst_dataset_save(const cst_dataset* data, const char* path) {
  return guard([&] {
    require(data, "null dataset");
    auto out = open_for_write(path);
    cst::save_dataset(out, data->data);
    if (!out.flush()) throw IoError(std::string("write failed for '") + path + "'");
  });
}

cst_status cst_dataset_info_get(const cst_dataset* data, cst_dataset_info* out) {
  return guard([&] {
    require(data && out, "null argument");
    out->samples = data->data.size();
    out->features = data->data.feature_dim();
    out->actions = data->data.num_actions;
    out->classes = data->data.num_classes;
    out->has_ground_truth = data->data.ground_truth.has_value();
  });
}

void cst_dataset_free(cst_dataset* data) { delete data; }

cst_status cst_train(const cst_config* config, const cst_dataset* train, const char* backbone, const char* method,
                     uint64_t seed, cst_model** out) {
  return guard([&] {
    require(config && train && backbone && method && out, "null argument");
    const auto kind = cst::parse_backbone_kind(backbone);
    const auto m = cst::parse_method(method);
    auto fit = cst::train_single(config->config, train->data, kind, m, seed);
    auto* handle = new cst_model{std::move(fit.model), {}, fit.lambda};
    handle->header = {{"backbone", cst::to_string(kind)},
                      {"method", cst::to_string(m)},
                      {"seed", std::to_string(seed)},
                      {"lambda", cst::format_double(fit.lambda)},
                      {"config_hash", config->hash}};
    *out = handle;
  });
}

double cst_model_lambda(const cst_model* model) { return model ? model->lambda : 0.0; }

cst_status cst_model_save(const cst_model* model, const char* path) {
  return guard([&] {
    require(model, "null model");
    auto out = open_for_write(path);
    cst::save_model(out, model->model, model->header);
    if (!out.flush()) throw IoError(std::string("write failed for '") + path + "'");
  });
}

cst_status cst_model_load(const char* path, cst_model** out) {
  return guard([&] {
    require(out, "null argument");
    auto in = open_for_read(path);
    auto* handle = new cst_model{};
    try {
      handle->model = cst::load_model(in, &handle->header);
      auto it = handle->header.find("lambda");
      if (it != handle->header.end()) handle->lambda = cst::parse_double(it->second);
    } catch (...) {
      delete handle;
      throw;
    }
    *out = handle;
  });
}

void cst_model_free(cst_model* model) { delete model; }

cst_status cst_evaluate(const cst_model* model, const cst_dataset* data, cst_metrics* out) {
  return guard([&] {
    require(model && data && out, "null argument");
    const double nan = std::numeric_limits<double>::quiet_NaN();
    cst_metrics m{nan, nan, nan, cst::factual_nll(model->model, data->data)};
    if (data->data.ground_truth) {
      const auto r = cst::evaluate(model->model, data->data);
      m.nll = r.nll;
      m.hamming = r.hamming;
      m.best_action_accuracy = r.best_action_accuracy;
    }
    *out = m;
  });
}

cst_status cst_predict(const cst_model* model, const cst_dataset* data, double* out, size_t capacity) {
  return guard([&] {
    require(model && data && out, "null argument");
    const auto& d = data->data;
    require(capacity >= d.size() * d.num_actions, "output buffer too small");
    require(model->model.output_dim() >= 2, "model has fewer than two classes");
    const auto probs = cst::predict_all_actions(model->model, d.features, d.num_actions);
    for (std::size_t r = 0; r < probs.rows(); ++r) out[r] = probs(r, 1);
  });
}

cst_status cst_run_experiment(const cst_config* config, const char* out_dir, cst_progress_fn progress, void* user,
                              size_t* divergences) {
  cst_status status = guard([&] {
    require(config && out_dir, "null argument");
    cst::ProgressFn fn;
    if (progress) fn = [&](const std::string& msg) { progress(msg.c_str(), user); };
    const auto result = cst::run_experiment(config->config, fn);
    cst::write_results(result, out_dir);
    if (divergences) *divergences = result.divergences.size();
    if (!result.divergences.empty()) {
      std::string msg = "training diverged:";
      for (const auto& d : result.divergences) msg += "\n  " + d;
      throw cst::NumericError(msg);
    }
  });
  return status;
}

cst_status cst_toy_demo(const char* config_text, const char* out_dir, cst_toy_summary* out) {
  return guard([&] {
    require(config_text, "null config");
    const auto result = cst::toy_demo(cst::parse_toy_demo_config(config_text));
    if (out_dir) cst::write_toy_demo(result, out_dir);
    if (out)
      *out = {{result.dm_accuracy[0], result.dm_accuracy[1]}, {result.final_accuracy[0], result.final_accuracy[1]}};
  });
}

}  // extern "C"
