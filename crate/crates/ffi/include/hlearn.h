#ifndef HLEARN_H
#define HLEARN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum HlStatus {
  HL_STATUS_OK = 0,
  HL_STATUS_NULL_POINTER = 1,
  HL_STATUS_INVALID_ARGUMENT = 2,
  HL_STATUS_CONFIG = 3,
  HL_STATUS_DATA = 4,
  HL_STATUS_POSITIVITY = 5,
  HL_STATUS_NUMERICAL = 6,
  HL_STATUS_IO = 7,
  HL_STATUS_INTERNAL = 8,
  HL_STATUS_PANIC = 9,
} HlStatus;

// Covariates, treatments, outcomes and optional potential-outcome means.
typedef struct HlDataset HlDataset;

// A fitted CATE estimator.
typedef struct HlEstimator HlEstimator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. Valid until
// the next call into this library on the same thread.
const char *hl_last_error(void);

// Library version as a static NUL-terminated string.
const char *hl_version(void);

// Builds a dataset from a row-major `n x d` covariate matrix, `n` treatment
// indicators (0 or 1) and `n` outcomes.
//
// # Safety
// `x` must point to `n * d` doubles, `t` to `n` bytes and `y` to `n` doubles.
enum HlStatus hl_dataset_new(const double *x,
                             size_t n,
                             size_t d,
                             const uint8_t *t,
                             const double *y,
                             struct HlDataset **out);

// Attaches true potential-outcome means so PEHE can be computed.
//
// # Safety
// `dataset` must be a live handle; `mu0` and `mu1` must point to `n` doubles.
enum HlStatus hl_dataset_set_truth(struct HlDataset *dataset, const double *mu0, const double *mu1);

// Reads a headered CSV with columns `t`, `y`, optional `mu0`/`mu1`, and
// every other column as a feature.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum HlStatus hl_dataset_load_csv(const char *path, struct HlDataset **out);

// Number of rows, or 0 for NULL.
//
// # Safety
// `dataset` must be NULL or a live handle.
size_t hl_dataset_rows(const struct HlDataset *dataset);

// Number of covariates, or 0 for NULL.
//
// # Safety
// `dataset` must be NULL or a live handle.
size_t hl_dataset_cols(const struct HlDataset *dataset);

// Writes the true CATE of every row into `out_tau` (`n` doubles).
//
// # Safety
// `dataset` must be a live handle; `out_tau` must have room for `n` doubles.
enum HlStatus hl_dataset_true_tau(const struct HlDataset *dataset, double *out_tau);

// # Safety
// `dataset` must be NULL or a handle not yet freed.
void hl_dataset_free(struct HlDataset *dataset);

// Fits a learner on `train`, checkpointing and selecting lambda on `val`.
//
// `config_json` is `{"learner": {...}, "settings": {...}}`, where
// `learner` uses the same keys as a `[[learners]]` entry of an experiment
// file and `settings` holds `network`, `ridge`, `stage1`, `lambda_grid`,
// `standardize_features` and `standardize_outcome`. NULL selects an
// H-learner with X pseudo-outcomes and default settings.
//
// # Safety
// `train` and `val` must be live handles; `config_json` must be NULL or a
// NUL-terminated string; `out` must be writable.
enum HlStatus hl_estimator_fit(const struct HlDataset *train,
                               const struct HlDataset *val,
                               const char *config_json,
                               uint64_t seed,
                               struct HlEstimator **out);

// Predicts `tau(x)` for `n` rows of `d` raw covariates into `out_tau`.
//
// # Safety
// `estimator` must be a live handle; `x` must point to `n * d` doubles and
// `out_tau` to room for `n` doubles.
enum HlStatus hl_estimator_predict_tau(const struct HlEstimator *estimator,
                                       const double *x,
                                       size_t n,
                                       size_t d,
                                       double *out_tau);

// Predicts both outcome heads. Fails with `HL_STATUS_INVALID_ARGUMENT` for
// estimators that only model the effect (direct learners).
//
// # Safety
// As for [`hl_estimator_predict_tau`], with `out_mu0` and `out_mu1` each
// holding `n` doubles.
enum HlStatus hl_estimator_predict_outcomes(const struct HlEstimator *estimator,
                                            const double *x,
                                            size_t n,
                                            size_t d,
                                            double *out_mu0,
                                            double *out_mu1);

// Chosen (or fixed) lambda of an H-learner; NaN for other learners and NULL.
//
// # Safety
// `estimator` must be NULL or a live handle.
double hl_estimator_lambda(const struct HlEstimator *estimator);

// Learner identifier, valid while the handle lives; NULL for NULL.
//
// # Safety
// `estimator` must be NULL or a live handle.
const char *hl_estimator_learner(const struct HlEstimator *estimator);

// Saves the estimator (with its standardization) as JSON.
//
// # Safety
// `estimator` must be a live handle; `path` a NUL-terminated string.
enum HlStatus hl_estimator_save(const struct HlEstimator *estimator, const char *path);

// Loads an estimator saved by [`hl_estimator_save`] or `hlearn fit`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum HlStatus hl_estimator_load(const char *path, struct HlEstimator **out);

// # Safety
// `estimator` must be NULL or a handle not yet freed.
void hl_estimator_free(struct HlEstimator *estimator);

// Mean squared CATE error and its square root over `n` rows.
//
// # Safety
// `tau_hat` and `tau` must point to `n` doubles; the out-pointers may be
// NULL when a value is not needed.
enum HlStatus hl_pehe(const double *tau_hat,
                      const double *tau,
                      size_t n,
                      double *out_eps,
                      double *out_root);

// Root-PEHE of `estimator` on a dataset with ground truth.
//
// # Safety
// Both handles must be live; `out_root` must be writable.
enum HlStatus hl_estimator_pehe(const struct HlEstimator *estimator,
                                const struct HlDataset *dataset,
                                double *out_root);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HLEARN_H */
