/* C interface to the sscl library. Every function returns SSCL_OK or one of
 * the error codes below; the message of the last failure on the calling
 * thread is available from sscl_last_error(). Strings returned through char**
 * are owned by the caller and released with sscl_string_free(). */
#ifndef SSCL_SSCL_H
#define SSCL_SSCL_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define SSCL_API __attribute__((visibility("default")))
#else
#define SSCL_API
#endif

enum sscl_status {
  SSCL_OK = 0,
  SSCL_ERR_CONFIG = 1,
  SSCL_ERR_SHAPE = 2,
  SSCL_ERR_DEGENERATE = 3,
  SSCL_ERR_CAPACITY = 4,
  SSCL_ERR_NORMALIZATION = 5,
  SSCL_ERR_CONSISTENCY = 6,
  SSCL_ERR_DOMAIN = 7,
  SSCL_ERR_DATA = 8,
  SSCL_ERR_MISUSE = 9,
  SSCL_ERR_IO = 10,
  SSCL_ERR_USAGE = 11,
  SSCL_ERR_ARGUMENT = 12, /* null handle or pointer */
  SSCL_ERR_INTERNAL = 99
};

typedef struct sscl_config sscl_config; /* experiment configuration */
typedef struct sscl_split sscl_split;   /* split descriptor with loaded pools */
typedef struct sscl_model sscl_model;   /* training state */

typedef void (*sscl_progress_fn)(const char* line, void* user);

SSCL_API const char* sscl_version(void);
SSCL_API const char* sscl_last_error(void);
SSCL_API const char* sscl_status_name(int status);
SSCL_API void sscl_string_free(char* s);

/* Configuration: a key = value file with [sections]; overrides are
 * "--key=value" strings applied over the file. A null path starts from the
 * built-in defaults. */
SSCL_API int sscl_config_load(const char* path, const char* const* overrides, size_t n_overrides,
                              sscl_config** out);
SSCL_API void sscl_config_free(sscl_config* config);
/* Keys: name, split, output, seeds, train (config text of the training run). */
SSCL_API int sscl_config_get(const sscl_config* config, const char* key, char** value);
SSCL_API int sscl_config_seed_count(const sscl_config* config, size_t* n);
SSCL_API int sscl_config_seed_at(const sscl_config* config, size_t index, uint64_t* seed);

/* Builds the split described by the [data] section and writes its descriptor. */
SSCL_API int sscl_prepare_data(const sscl_config* config, const char* descriptor_path);

SSCL_API int sscl_split_open(const char* descriptor_path, sscl_split** out);
SSCL_API void sscl_split_free(sscl_split* split);
/* Pools: labeled, unlabeled, validation, test. */
SSCL_API int sscl_split_pool_size(const sscl_split* split, const char* pool, size_t* n);
SSCL_API int sscl_split_class_count(const sscl_split* split, int* n);

/* A fresh model for the configured training run with the given seed. */
SSCL_API int sscl_model_create(const sscl_config* config, const sscl_split* split, uint64_t seed, sscl_model** out);
SSCL_API int sscl_model_load(const char* checkpoint_path, sscl_model** out);
SSCL_API int sscl_model_save(const sscl_model* model, const char* checkpoint_path);
SSCL_API void sscl_model_free(sscl_model* model);
/* Trains to the end of the run; writes checkpoint, metric log and config echo
 * into out_dir. */
SSCL_API int sscl_model_train(sscl_model* model, const sscl_split* split, const char* out_dir);
/* Advances to iteration `stop` (clamped to the run length) without writing files. */
SSCL_API int sscl_model_train_until(sscl_model* model, const sscl_split* split, int64_t stop);
SSCL_API int sscl_model_iteration(const sscl_model* model, int64_t* iteration);
SSCL_API int sscl_model_seed(const sscl_model* model, uint64_t* seed);
/* Run label, e.g. "alpha=2 t_end=200" or "moco". */
SSCL_API int sscl_model_label(const sscl_model* model, char** label);
/* Directory for the model's run under `root`: <root>/<label>/seed=<seed>. */
SSCL_API int sscl_run_directory(const sscl_model* model, const char* root, char** dir);

/* Accuracy on `pool`; the labeled pool provides references or training data.
 * Probe and fine-tune settings come from the [eval] section. */
SSCL_API int sscl_eval_knn(const sscl_model* model, const sscl_split* split, const char* pool, int k,
                           double temperature, double* accuracy);
SSCL_API int sscl_eval_linear(const sscl_model* model, const sscl_split* split, const sscl_config* config,
                              const char* pool, double* accuracy);
SSCL_API int sscl_eval_finetune(const sscl_model* model, const sscl_split* split, const sscl_config* config,
                                const char* pool, double* accuracy);

/* Writes an embedding bank of `pool` with true class labels; rows written go to *rows. */
SSCL_API int sscl_export_embeddings(const sscl_model* model, const sscl_split* split, const char* pool,
                                    const char* path, size_t* rows);

/* Adds one metric to the run record in `dir`. */
SSCL_API int sscl_record_metric(const char* dir, const char* label, uint64_t seed, const char* metric, double value);

/* Runs the [sweep] grid over every configured seed under the experiment
 * output folder and writes sweep_<metric>.csv matrices there. */
SSCL_API int sscl_sweep(const sscl_config* config, const sscl_split* split, sscl_progress_fn progress, void* user);

/* Aggregates run records found below `paths` into a mean (sd) table. With
 * plots != 0 each run folder holding a metric log also gets loss.svg and knn.svg. */
SSCL_API int sscl_report(const char* const* paths, size_t n_paths, double scale, int plots, char** table_csv);

#ifdef __cplusplus
}
#endif

#endif
