#ifndef EMF_FFI_H
#define EMF_FFI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result codes.
 */
typedef enum EmfStatus {
  EMF_STATUS_OK = 0,
  EMF_STATUS_NULL_POINTER = 1,
  EMF_STATUS_INVALID_ARGUMENT = 2,
  EMF_STATUS_IO = 3,
  EMF_STATUS_BAD_CHECKPOINT = 4,
  EMF_STATUS_INSUFFICIENT_CALIBRATION = 5,
  EMF_STATUS_NUMERIC = 6,
  EMF_STATUS_PANIC = 7,
} EmfStatus;

/**
 * Per-step conformal radii.
 */
typedef struct EmfBand EmfBand;

/**
 * A forecaster loaded from a checkpoint.
 */
typedef struct EmfModel EmfModel;

/**
 * Coverage of a set of intervals on held-out targets.
 */
typedef struct EmfCoverage {
  /**
   * Fraction of (example, step) pairs covered.
   */
  double ic;
  /**
   * Fraction of examples covered at every step.
   */
  double jc;
  /**
   * Mean interval width.
   */
  double miw;
  size_t n_test;
} EmfCoverage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *emf_version(void);

/**
 * Message for the most recent failure on this thread, or null if none.
 * Valid until the next failing call on the same thread.
 */
const char *emf_last_error_message(void);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EmfStatus emf_model_load(const char *path, struct EmfModel **out);

/**
 * Decodes a checkpoint held in memory.
 *
 * # Safety
 * `data` must be valid for `len` reads and `out` a valid pointer.
 */
enum EmfStatus emf_model_from_bytes(const uint8_t *data, size_t len, struct EmfModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from `emf_model_load` or `emf_model_from_bytes` and not
 * have been freed.
 */
void emf_model_free(struct EmfModel *model);

/**
 * Input window length, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t emf_model_lookback(const struct EmfModel *model);

/**
 * Forecast length, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t emf_model_horizon(const struct EmfModel *model);

/**
 * Number of trainable scalars, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t emf_model_param_count(const struct EmfModel *model);

/**
 * Model family name ("emforecaster", "dlinear", "mlp", "persistence") as a
 * static string, or null for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
const char *emf_model_kind(const struct EmfModel *model);

/**
 * Forecasts `n` windows. `inputs` holds `n * lookback` values and `out`
 * receives `n * horizon`.
 *
 * # Safety
 * `model` must be a live handle; the buffers must have the stated sizes.
 */
enum EmfStatus emf_model_predict(const struct EmfModel *model,
                                 const double *inputs,
                                 size_t n,
                                 double *out);

/**
 * Split-conformal critical score of `m` residuals at level `alpha`.
 *
 * # Safety
 * `residuals` must be valid for `m` reads and `out` a valid pointer.
 */
enum EmfStatus emf_critical_epsilon(const double *residuals, size_t m, double alpha, double *out);

/**
 * Calibrates a multi-step band from `m` calibration forecasts and targets,
 * each `m * horizon` values.
 *
 * # Safety
 * The buffers must have the stated sizes and `out` must be a valid pointer.
 */
enum EmfStatus emf_band_calibrate(const double *forecasts,
                                  const double *targets,
                                  size_t m,
                                  size_t horizon,
                                  double alpha,
                                  struct EmfBand **out);

/**
 * Releases a band. Null is ignored.
 *
 * # Safety
 * `band` must come from `emf_band_calibrate` and not have been freed.
 */
void emf_band_free(struct EmfBand *band);

/**
 * Number of steps covered by the band, or 0 for a null handle.
 *
 * # Safety
 * `band` must be null or a live handle.
 */
size_t emf_band_horizon(const struct EmfBand *band);

/**
 * Copies the per-step radii into `out`, which holds `horizon` values.
 *
 * # Safety
 * `band` must be a live handle and `out` valid for `horizon` writes.
 */
enum EmfStatus emf_band_epsilons(const struct EmfBand *band, double *out, size_t horizon);

/**
 * Interval bounds around one forecast of `horizon` values.
 *
 * # Safety
 * `band` must be a live handle; the three buffers must hold `horizon` values.
 */
enum EmfStatus emf_band_interval(const struct EmfBand *band,
                                 const double *forecast,
                                 size_t horizon,
                                 double *lower,
                                 double *upper);

/**
 * Coverage of the band's intervals on `n` forecasts and targets, each
 * `n * horizon` values.
 *
 * # Safety
 * `band` must be a live handle; the buffers must have the stated sizes.
 */
enum EmfStatus emf_band_coverage(const struct EmfBand *band,
                                 const double *forecasts,
                                 const double *targets,
                                 size_t n,
                                 size_t horizon,
                                 struct EmfCoverage *out);

/**
 * Trade-off scores of `k >= 2` competing predictors into `out` (`k`
 * values). A non-zero `verbatim_sign` selects `1 / (1 + e^z)` for the width
 * term instead of the default `1 / (1 + e^-z)`.
 *
 * # Safety
 * `reports` must be valid for `k` reads and `out` for `k` writes.
 */
enum EmfStatus emf_tos_scores(const struct EmfCoverage *reports,
                              size_t k,
                              double beta,
                              double lambda,
                              int32_t verbatim_sign,
                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMF_FFI_H */
