#ifndef METACONF_H
#define METACONF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MetaconfStatus {
  METACONF_STATUS_OK = 0,
  METACONF_STATUS_NULL_POINTER = 1,
  METACONF_STATUS_INVALID_ARGUMENT = 2,
  METACONF_STATUS_CONFIG = 3,
  METACONF_STATUS_DIMENSION = 4,
  METACONF_STATUS_NUMERICAL = 5,
  METACONF_STATUS_IO = 6,
  METACONF_STATUS_PARSE = 7,
  METACONF_STATUS_UNDEFINED_METRIC = 8,
  METACONF_STATUS_PANIC = 9,
} MetaconfStatus;

typedef enum MetaconfTaskMode {
  METACONF_TASK_MODE_REGRESSION = 0,
  METACONF_TASK_MODE_CLASSIFICATION = 1,
} MetaconfTaskMode;

/**
 * Opaque dataset handle.
 */
typedef struct MetaconfDataset MetaconfDataset;

/**
 * Opaque trained-model handle.
 */
typedef struct MetaconfModel MetaconfModel;

/**
 * Metric values; a metric is meaningful only when its `has_` flag is set.
 */
typedef struct MetaconfMetrics {
  double auroc;
  bool has_auroc;
  double aupr_error;
  bool has_aupr_error;
  double aupr_success;
  bool has_aupr_success;
  double fpr_at_95_tpr;
  bool has_fpr_at_95_tpr;
  double ause_rmse;
  bool has_ause_rmse;
  double ause_absrel;
  bool has_ause_absrel;
  size_t n_samples;
  double positive_rate;
} MetaconfMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty when none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *metaconf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *metaconf_version(void);

/**
 * Generates the synthetic benchmark described by `config_toml` (TOML text,
 * or null for defaults).
 *
 * # Safety
 * `config_toml` is null or a NUL-terminated string; `train_out` and
 * `test_out` are valid pointers to writable handle slots.
 */
enum MetaconfStatus metaconf_dataset_generate(const char *config_toml,
                                              struct MetaconfDataset **train_out,
                                              struct MetaconfDataset **test_out);

/**
 * Loads a dataset CSV written by `metaconf datagen`.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is a valid pointer to a writable handle slot.
 */
enum MetaconfStatus metaconf_dataset_load(const char *path,
                                          enum MetaconfTaskMode mode,
                                          struct MetaconfDataset **out);

/**
 * Builds a dataset from row-major `inputs` (`n × dim`), task predictions and
 * ground truths. `cluster_ids` may be null.
 *
 * # Safety
 * Each non-null array holds at least the stated number of elements; `out`
 * is a valid pointer to a writable handle slot.
 */
enum MetaconfStatus metaconf_dataset_from_arrays(const double *inputs,
                                                 size_t n,
                                                 size_t dim,
                                                 const double *task_preds,
                                                 const double *ground_truths,
                                                 const size_t *cluster_ids,
                                                 enum MetaconfTaskMode mode,
                                                 struct MetaconfDataset **out);

/**
 * Number of samples; 0 for a null handle.
 *
 * # Safety
 * `ds` is null or a live dataset handle.
 */
size_t metaconf_dataset_len(const struct MetaconfDataset *ds);

/**
 * Input dimension; 0 for a null handle or an empty dataset.
 *
 * # Safety
 * `ds` is null or a live dataset handle.
 */
size_t metaconf_dataset_input_dim(const struct MetaconfDataset *ds);

/**
 * Number of samples whose task prediction is correct; 0 for a null handle.
 *
 * # Safety
 * `ds` is null or a live dataset handle.
 */
size_t metaconf_dataset_n_correct(const struct MetaconfDataset *ds);

/**
 * # Safety
 * `ds` is null or a handle from this library that has not been freed.
 */
void metaconf_dataset_free(struct MetaconfDataset *ds);

/**
 * Trains a confidence estimator on `train` with the `[model]` and `[train]`
 * sections of `config_toml` (null for defaults).
 *
 * # Safety
 * `train` is a live dataset handle; `config_toml` is null or NUL-terminated;
 * `out` is a valid pointer to a writable handle slot.
 */
enum MetaconfStatus metaconf_model_train(const struct MetaconfDataset *train,
                                         const char *config_toml,
                                         struct MetaconfModel **out);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` is NUL-terminated; `out` is a valid pointer to a writable handle slot.
 */
enum MetaconfStatus metaconf_model_load(const char *path, struct MetaconfModel **out);

/**
 * Writes a checkpoint file.
 *
 * # Safety
 * `model` is a live model handle; `path` is NUL-terminated.
 */
enum MetaconfStatus metaconf_model_save(const struct MetaconfModel *model, const char *path);

/**
 * Input dimension the model expects; 0 for a null handle.
 *
 * # Safety
 * `model` is null or a live model handle.
 */
size_t metaconf_model_input_dim(const struct MetaconfModel *model);

/**
 * Number of parameters; 0 for a null handle.
 *
 * # Safety
 * `model` is null or a live model handle.
 */
size_t metaconf_model_param_count(const struct MetaconfModel *model);

/**
 * Confidence scores in (0, 1) for `n` row-major inputs of width `dim`.
 *
 * # Safety
 * `model` is a live model handle; `inputs` holds `n × dim` values and
 * `scores_out` has room for `n`.
 */
enum MetaconfStatus metaconf_model_score(const struct MetaconfModel *model,
                                         const double *inputs,
                                         size_t n,
                                         size_t dim,
                                         double *scores_out);

/**
 * Computes all metrics of `model` on `ds`.
 *
 * # Safety
 * `model` and `ds` are live handles; `out` points to writable memory.
 */
enum MetaconfStatus metaconf_model_evaluate(const struct MetaconfModel *model,
                                            const struct MetaconfDataset *ds,
                                            struct MetaconfMetrics *out);

/**
 * # Safety
 * `model` is null or a handle from this library that has not been freed.
 */
void metaconf_model_free(struct MetaconfModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METACONF_H */
