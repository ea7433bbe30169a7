#ifndef COLLIN_H
#define COLLIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum CollinStatus {
  COLLIN_STATUS_OK = 0,
  COLLIN_STATUS_NULL_POINTER = 1,
  COLLIN_STATUS_INVALID_ARGUMENT = 2,
  COLLIN_STATUS_DIMENSION_MISMATCH = 3,
  COLLIN_STATUS_SINGLE_CLASS = 4,
  COLLIN_STATUS_NUMERICAL = 5,
  COLLIN_STATUS_IO = 6,
  COLLIN_STATUS_PANIC = 7,
} CollinStatus;

/**
 * Opaque dataset handle.
 */
typedef struct CollinDataset CollinDataset;

/**
 * Opaque fitted model: coefficients on the standardized scale plus the
 * training standardization, so predictions take raw predictors.
 */
typedef struct CollinModel CollinModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next `collin_*` call on the same thread.
 */
const char *collin_last_error_message(void);

/**
 * Creates a dataset from row-major predictors `x` (`n × d`) and 0/1
 * outcomes `y` (`n`). Feature names are `x0..x{d-1}`.
 *
 * # Safety
 * `x` must point to `n * d` doubles, `y` to `n` doubles, `out` to writable memory.
 */
enum CollinStatus collin_dataset_new(const double *x,
                                     const double *y,
                                     size_t n,
                                     size_t d,
                                     struct CollinDataset **out);

/**
 * Loads a dataset from CSV (predictor columns then `outcome`). `dose_path`
 * may be null.
 *
 * # Safety
 * `path` (and `dose_path` when non-null) must be NUL-terminated strings.
 */
enum CollinStatus collin_dataset_from_csv(const char *path,
                                          const char *dose_path,
                                          struct CollinDataset **out);

/**
 * Marks predictors as dose columns (nonzero byte = dose) for LR_NN.
 *
 * # Safety
 * `dataset` must be a live handle and `mask` must point to `d` bytes.
 */
enum CollinStatus collin_dataset_set_dose_mask(struct CollinDataset *dataset,
                                               const uint8_t *mask,
                                               size_t d);

/**
 * # Safety
 * `dataset` must be a live handle; `n` and `d` writable.
 */
enum CollinStatus collin_dataset_shape(const struct CollinDataset *dataset, size_t *n, size_t *d);

/**
 * # Safety
 * `dataset` must be null or a handle not yet freed.
 */
void collin_dataset_free(struct CollinDataset *dataset);

/**
 * Standardizes the dataset and fits `method` ("LR", "Lasso", "Ridge",
 * "ElasticNet", "Dropout", "PCLR", "LAELR", "LR_NN"). `hyper` holds the
 * method's hyperparameters in search-space order (c_l1; c_l2; c_l1, c_l2;
 * delta; k; k, c_lae); pass `n_hyper = 0` for defaults.
 *
 * # Safety
 * Pointers must be valid; `hyper` must hold `n_hyper` doubles.
 */
enum CollinStatus collin_fit(const struct CollinDataset *dataset,
                             const char *method,
                             const double *hyper,
                             size_t n_hyper,
                             uint64_t seed,
                             struct CollinModel **out);

/**
 * Like [`collin_fit`], but tunes the hyperparameters by cross-validated
 * log-likelihood first.
 *
 * # Safety
 * Pointers must be valid.
 */
enum CollinStatus collin_tune_fit(const struct CollinDataset *dataset,
                                  const char *method,
                                  uint64_t seed,
                                  struct CollinModel **out);

/**
 * Number of hyperparameters `method` takes for `d` predictors.
 *
 * # Safety
 * `method` must be a NUL-terminated string; `out` writable.
 */
enum CollinStatus collin_method_n_hyper(const char *method, size_t d, size_t *out);

/**
 * Predicted risks for raw row-major predictors `x` (`n × d`) into `out` (`n`).
 *
 * # Safety
 * `x` must hold `n * d` doubles and `out` room for `n`.
 */
enum CollinStatus collin_model_predict(const struct CollinModel *model,
                                       const double *x,
                                       size_t n,
                                       size_t d,
                                       double *out);

/**
 * Standardized-scale coefficients (`d` values) and intercept. `raw_scale`
 * nonzero converts them to the original predictor units.
 *
 * # Safety
 * `coefficients` must have room for `d` doubles; `intercept` writable.
 */
enum CollinStatus collin_model_coefficients(const struct CollinModel *model,
                                            uint8_t raw_scale,
                                            double *coefficients,
                                            size_t d,
                                            double *intercept);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void collin_model_free(struct CollinModel *model);

/**
 * Area under the ROC curve of `predicted` against 0/1 `y`.
 *
 * # Safety
 * Both arrays must hold `n` doubles; `out` writable.
 */
enum CollinStatus collin_auroc(const double *predicted, const double *y, size_t n, double *out);

/**
 * Median variance inflation factor of a `d × d` row-major correlation matrix.
 *
 * # Safety
 * `corr` must hold `d * d` doubles; `out` writable.
 */
enum CollinStatus collin_median_vif(const double *corr, size_t d, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COLLIN_H */
