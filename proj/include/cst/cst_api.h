#ifndef CST_CST_API_H
#define CST_CST_API_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CST_API __declspec(dllexport)
#else
#define CST_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Every call returns a status; on failure cst_last_error() describes it. */
typedef enum cst_status {
  CST_OK = 0,
  CST_CONFIG_ERROR = 1,  /* bad config, arguments, dimensions or file content */
  CST_NUMERIC_ERROR = 2, /* training diverged (NaN/Inf) */
  CST_IO_ERROR = 3,
  CST_INTERNAL_ERROR = 4
} cst_status;

typedef struct cst_config cst_config;
typedef struct cst_dataset cst_dataset;
typedef struct cst_model cst_model;

typedef struct cst_dataset_info {
  size_t samples;
  size_t features;
  size_t actions;
  size_t classes;
  int has_ground_truth;
} cst_dataset_info;

/* Ground-truth metrics are NaN when the dataset has no counterfactual table. */
typedef struct cst_metrics {
  double nll;
  double hamming;
  double best_action_accuracy;
  double factual_nll;
} cst_metrics;

/* Per-action argmax accuracy on the held-out moons. */
typedef struct cst_toy_summary {
  double dm_accuracy[2];
  double final_accuracy[2];
} cst_toy_summary;

typedef void (*cst_progress_fn)(const char* message, void* user);

/* Thread-local; valid until the next failing call on the same thread. */
CST_API const char* cst_last_error(void);
CST_API const char* cst_version(void);

CST_API cst_status cst_config_parse(const char* text, cst_config** out);
CST_API cst_status cst_config_load(const char* path, cst_config** out);
CST_API void cst_config_free(cst_config* config);
/* Writes 16 hex digits and a terminator; `out` needs 17 bytes. */
CST_API cst_status cst_config_hash(const cst_config* config, char* out, size_t capacity);
CST_API cst_status cst_config_canonical(const cst_config* config, char* out, size_t capacity, size_t* needed);
CST_API size_t cst_config_dataset_count(const cst_config* config);
CST_API cst_status cst_config_dataset_label(const cst_config* config, size_t index, char* out, size_t capacity);
CST_API size_t cst_config_seed_count(const cst_config* config);
CST_API uint64_t cst_config_seed(const cst_config* config, size_t index);
/* Worker threads for cst_run_experiment; results do not depend on it. */
CST_API cst_status cst_config_set_jobs(cst_config* config, size_t jobs);

/* The train/test pair a sweep job uses for `label` under `seed`. */
CST_API cst_status cst_dataset_generate(const cst_config* config, const char* label, uint64_t seed, cst_dataset** train,
                                        cst_dataset** test);
CST_API cst_status cst_dataset_load(const char* path, cst_dataset** out);
CST_API cst_status cst_dataset_save(const cst_dataset* data, const char* path);
CST_API cst_status cst_dataset_info_get(const cst_dataset* data, cst_dataset_info* out);
CST_API void cst_dataset_free(cst_dataset* data);

/* backbone: DM | HSIC | UDM; method: Backbone | PL | PL+CVAT. */
CST_API cst_status cst_train(const cst_config* config, const cst_dataset* train, const char* backbone,
                             const char* method, uint64_t seed, cst_model** out);
CST_API double cst_model_lambda(const cst_model* model);
CST_API cst_status cst_model_save(const cst_model* model, const char* path);
CST_API cst_status cst_model_load(const char* path, cst_model** out);
CST_API void cst_model_free(cst_model* model);

CST_API cst_status cst_evaluate(const cst_model* model, const cst_dataset* data, cst_metrics* out);
/* P(class 1 | x_i, a), row-major samples x actions; `out` holds samples * actions values. */
CST_API cst_status cst_predict(const cst_model* model, const cst_dataset* data, double* out, size_t capacity);

/* Writes per_seed.csv, aggregate.csv and history.csv into out_dir. Returns
   CST_NUMERIC_ERROR after writing partial results when any job diverged. */
CST_API cst_status cst_run_experiment(const cst_config* config, const char* out_dir, cst_progress_fn progress,
                                      void* user, size_t* divergences);

/* `config_text` uses the [toy] section; writes the plot CSVs into out_dir
   when it is non-null. */
CST_API cst_status cst_toy_demo(const char* config_text, const char* out_dir, cst_toy_summary* out);

#ifdef __cplusplus
}
#endif

#endif
