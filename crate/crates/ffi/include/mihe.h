/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef MIHE_H
#define MIHE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MiheStatus {
  MIHE_STATUS_OK = 0,
  MIHE_STATUS_NULL_POINTER = 1,
  MIHE_STATUS_INVALID_ARGUMENT = 2,
  MIHE_STATUS_IO = 3,
  MIHE_STATUS_PARSE = 4,
  MIHE_STATUS_DIMENSION_MISMATCH = 5,
  MIHE_STATUS_NUMERICAL = 6,
  MIHE_STATUS_PANIC = 7,
} MiheStatus;

// Opaque collection of labeled bags.
typedef struct MiheDataset MiheDataset;

// Opaque target/background dictionary.
typedef struct MiheDictionary MiheDictionary;

// Training settings. A `rho` of zero or less selects the automatic weight.
typedef struct MiheParams {
  double p;
  double rho;
  double beta;
  double lambda;
  size_t n_targets;
  size_t n_backgrounds;
  size_t max_outer_iters;
  double step_size;
  double obj_tol;
  size_t ista_iters;
  double ista_tol;
  bool nonnegative;
  uint64_t seed;
} MiheParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failed call on this thread; empty after a
// success. The pointer stays valid until the next call on the same thread.
const char *mihe_last_error(void);

// Writes the default training settings to `out`.
//
// # Safety
// `out` must be null or point to writable memory for one `MiheParams`.
enum MiheStatus mihe_params_default(struct MiheParams *out);

// Creates an empty dataset.
//
// # Safety
// `out` must be null or point to writable memory for one pointer.
enum MiheStatus mihe_dataset_new(struct MiheDataset **out);

// Appends a bag of `n_instances` spectra with `n_bands` values each.
//
// # Safety
// `dataset` must come from this library; `id` must be a NUL-terminated
// string; `data` must hold `n_instances * n_bands` values.
enum MiheStatus mihe_dataset_add_bag(struct MiheDataset *dataset,
                                     const char *id,
                                     bool positive,
                                     const double *data,
                                     size_t n_instances,
                                     size_t n_bands);

// Loads a dataset from a bag manifest.
//
// # Safety
// `manifest` must be a NUL-terminated path; `out` must point to writable
// memory for one pointer.
enum MiheStatus mihe_dataset_load(const char *manifest, struct MiheDataset **out);

// Number of bags in `dataset`, or 0 for null.
//
// # Safety
// `dataset` must be null or come from this library.
size_t mihe_dataset_bag_count(const struct MiheDataset *dataset);

// # Safety
// `dataset` must be null or come from this library and not be used again.
void mihe_dataset_free(struct MiheDataset *dataset);

// Trains a dictionary. `final_objective` may be null.
//
// # Safety
// Handles must come from this library; `params` must point to a valid
// `MiheParams`; `out` must point to writable memory for one pointer.
enum MiheStatus mihe_train(const struct MiheDataset *dataset,
                           const struct MiheParams *params,
                           struct MiheDictionary **out,
                           double *final_objective);

// Loads a dictionary or model file; columns must be unit norm.
//
// # Safety
// `path` must be a NUL-terminated path; `out` must point to writable memory
// for one pointer.
enum MiheStatus mihe_dictionary_load(const char *path, struct MiheDictionary **out);

// # Safety
// `dict` must come from this library; `path` must be a NUL-terminated path.
enum MiheStatus mihe_dictionary_save(const struct MiheDictionary *dict, const char *path);

// Band count and target/background column counts. Any output may be null.
//
// # Safety
// `dict` must come from this library; non-null outputs must be writable.
enum MiheStatus mihe_dictionary_shape(const struct MiheDictionary *dict,
                                      size_t *bands,
                                      size_t *targets,
                                      size_t *backgrounds);

// Copies the target columns (`bands × targets`, column-major) into `out`,
// which must hold exactly `len` values.
//
// # Safety
// `dict` must come from this library; `out` must hold `len` values.
enum MiheStatus mihe_dictionary_targets(const struct MiheDictionary *dict, double *out, size_t len);

// Copies the background columns (`bands × backgrounds`, column-major).
//
// # Safety
// As for [`mihe_dictionary_targets`].
enum MiheStatus mihe_dictionary_backgrounds(const struct MiheDictionary *dict,
                                            double *out,
                                            size_t len);

// # Safety
// `dict` must be null or come from this library and not be used again.
void mihe_dictionary_free(struct MiheDictionary *dict);

// ACE scores of `n` spectra against the target columns, with background
// statistics estimated from `n_background` spectra.
//
// # Safety
// `dict` must come from this library; `background` must hold
// `n_background * bands` values, `data` `n * bands` values and `out` `n`.
enum MiheStatus mihe_score_ace(const struct MiheDictionary *dict,
                               const double *background,
                               size_t n_background,
                               const double *data,
                               size_t n,
                               size_t bands,
                               double *out);

// Hybrid-detector scores; sparse coding uses `lambda`, `ista_iters`,
// `ista_tol` and `nonnegative` from `params`.
//
// # Safety
// `dict` must come from this library; `params` must be valid; `data` must
// hold `n * bands` values and `out` `n`.
enum MiheStatus mihe_score_hd(const struct MiheDictionary *dict,
                              const struct MiheParams *params,
                              const double *data,
                              size_t n,
                              size_t bands,
                              double *out);

// Area under the ROC curve of `n` scores with nonzero `labels` marking
// targets.
//
// # Safety
// `scores` and `labels` must hold `n` values; `out` must be writable.
enum MiheStatus mihe_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIHE_H */
