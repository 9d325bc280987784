#ifndef PREVALENS_H
#define PREVALENS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call.
 */
typedef enum PrvStatus {
  PRV_STATUS_OK = 0,
  PRV_STATUS_NULL_POINTER = 1,
  PRV_STATUS_INVALID_ARGUMENT = 2,
  PRV_STATUS_INSUFFICIENT_DATA = 3,
  PRV_STATUS_SHAPE = 4,
  PRV_STATUS_IO = 5,
  PRV_STATUS_FORMAT = 6,
  PRV_STATUS_PARSE = 7,
  PRV_STATUS_INTERNAL = 8,
} PrvStatus;

/**
 * An experiment configuration and, once run, its outcome.
 */
typedef struct PrvExperiment PrvExperiment;

/**
 * A loaded QuaNet model.
 */
typedef struct PrvQuaNet PrvQuaNet;

/**
 * Classifier rates as estimated on held-out data.
 */
typedef struct PrvRates {
  double tpr_hard;
  double fpr_hard;
  double tpr_soft;
  double fpr_soft;
} PrvRates;

/**
 * A prevalence estimate and how it was reached.
 */
typedef struct PrvEstimate {
  double p_positive;
  /**
   * Nonzero when the raw value was clamped into [0, 1].
   */
  int32_t clipped;
  /**
   * Nonzero when an adjustment fell back to its unadjusted form.
   */
  int32_t degenerate;
} PrvEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *prv_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *prv_version(void);

/**
 * Estimates with one of `cc`, `acc`, `pcc`, `pacc` from posteriors of
 * the positive class. `rates` may be null for `cc` and `pcc`.
 *
 * # Safety
 * `method` must be a NUL-terminated string, `posteriors` must point to
 * `n` values, `rates` must be null or valid, `result` must be writable.
 */
enum PrvStatus prv_estimate(const char *method,
                            const double *posteriors,
                            size_t n,
                            const struct PrvRates *rates,
                            struct PrvEstimate *result);

/**
 * Hard and soft rates from held-out posteriors and labels (nonzero =
 * positive).
 *
 * # Safety
 * `posteriors` and `labels` must point to `n` values; `result` must be
 * writable.
 */
enum PrvStatus prv_estimate_rates(const double *posteriors,
                                  const int32_t *labels,
                                  size_t n,
                                  struct PrvRates *result);

/**
 * EM prior adjustment. `iterations` may be null.
 *
 * # Safety
 * `posteriors` must point to `n` values; `result` must be writable;
 * `iterations` must be null or writable.
 */
enum PrvStatus prv_emq(const double *posteriors,
                       size_t n,
                       double train_prior,
                       size_t max_iter,
                       double tol,
                       struct PrvEstimate *result,
                       size_t *iterations);

/**
 * AE, RAE or KLD (`metric` = 0, 1, 2) between two positive-class
 * prevalences, smoothing with `sample_size` where the metric needs it.
 *
 * # Safety
 * `result` must be writable.
 */
enum PrvStatus prv_metric(int32_t metric,
                          double true_prevalence,
                          double estimated_prevalence,
                          size_t sample_size,
                          double *result);

/**
 * Two-tailed paired t-test. `degenerate` may be null.
 *
 * # Safety
 * `a` and `b` must point to `n` values; `t` and `p_value` must be
 * writable; `degenerate` must be null or writable.
 */
enum PrvStatus prv_paired_ttest(const double *a,
                                const double *b,
                                size_t n,
                                double *t,
                                double *p_value,
                                int32_t *degenerate);

/**
 * Loads a QuaNet model saved by `prevalens run`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `handle` must be writable.
 */
enum PrvStatus prv_quanet_load(const char *path, struct PrvQuaNet **handle);

/**
 * Embedding width the model expects, or 0 for a null handle.
 *
 * # Safety
 * `handle` must be null or come from [`prv_quanet_load`].
 */
size_t prv_quanet_embedding_dim(const struct PrvQuaNet *handle);

/**
 * Runs QuaNet on one sample of `n` documents.
 *
 * # Safety
 * `handle` must come from [`prv_quanet_load`]; `posteriors` must point to
 * `n` values and `embeddings` to `n * dim`; `rates` and `result` must be
 * valid.
 */
enum PrvStatus prv_quanet_estimate(const struct PrvQuaNet *handle,
                                   const double *posteriors,
                                   const double *embeddings,
                                   size_t n,
                                   size_t dim,
                                   const struct PrvRates *rates,
                                   struct PrvEstimate *result);

/**
 * # Safety
 * `handle` must be null or come from [`prv_quanet_load`], and is invalid
 * afterwards.
 */
void prv_quanet_free(struct PrvQuaNet *handle);

/**
 * A new experiment with default settings, or null on allocation failure.
 */
struct PrvExperiment *prv_experiment_new(void);

/**
 * Sets one config key, as in a `key: value` config file.
 *
 * # Safety
 * `handle` must come from [`prv_experiment_new`]; `key` and `value` must
 * be NUL-terminated strings.
 */
enum PrvStatus prv_experiment_set(struct PrvExperiment *handle, const char *key, const char *value);

/**
 * Loads a `key: value` config file over the current settings.
 *
 * # Safety
 * `handle` must come from [`prv_experiment_new`]; `path` must be a
 * NUL-terminated string.
 */
enum PrvStatus prv_experiment_load_config(struct PrvExperiment *handle, const char *path);

/**
 * Runs the whole pipeline, writing to the configured output directory.
 * Nonzero `quiet` silences progress messages on stderr.
 *
 * # Safety
 * `handle` must come from [`prv_experiment_new`].
 */
enum PrvStatus prv_experiment_run(struct PrvExperiment *handle, int32_t quiet);

/**
 * Mean of `metric` (0 AE, 1 RAE, 2 KLD) for `method` over every seed of
 * the last successful run.
 *
 * # Safety
 * `handle` must come from [`prv_experiment_new`]; `method` must be a
 * NUL-terminated string; `result` must be writable.
 */
enum PrvStatus prv_experiment_mean_error(const struct PrvExperiment *handle,
                                         const char *method,
                                         int32_t metric,
                                         double *result);

/**
 * # Safety
 * `handle` must be null or come from [`prv_experiment_new`], and is
 * invalid afterwards.
 */
void prv_experiment_free(struct PrvExperiment *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PREVALENS_H */
