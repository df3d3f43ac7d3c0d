#ifndef MISGRAD_H
#define MISGRAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum MisgradStatus {
  MISGRAD_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  MISGRAD_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  MISGRAD_STATUS_INVALID_UTF8 = 2,
  /**
   * Lengths, indices or counts are inconsistent.
   */
  MISGRAD_STATUS_INVALID_ARGUMENT = 3,
  /**
   * The configuration could not be parsed.
   */
  MISGRAD_STATUS_CONFIG_PARSE = 4,
  /**
   * The configuration parsed but violates a constraint.
   */
  MISGRAD_STATUS_CONFIG_INVALID = 5,
  /**
   * Importance values or probabilities are unusable (negative, non-finite, all zero).
   */
  MISGRAD_STATUS_INVALID_IMPORTANCE = 6,
  /**
   * A linear system could not be solved.
   */
  MISGRAD_STATUS_SINGULAR_SYSTEM = 7,
  /**
   * A non-finite value appeared during training.
   */
  MISGRAD_STATUS_NON_FINITE = 8,
  /**
   * Reading or writing files failed, or an input file is malformed.
   */
  MISGRAD_STATUS_IO = 9,
  /**
   * Any other library error.
   */
  MISGRAD_STATUS_FAILED = 10,
  /**
   * The library panicked; the handle involved should be freed.
   */
  MISGRAD_STATUS_PANIC = 11,
} MisgradStatus;

/**
 * Opaque handle for the momentum-accumulated OMIS linear system.
 */
typedef struct MisgradMisSystem MisgradMisSystem;

/**
 * Opaque discrete distribution handle.
 */
typedef struct MisgradPdf MisgradPdf;

/**
 * Opaque trainer handle.
 */
typedef struct MisgradTrainer MisgradTrainer;

/**
 * One epoch's log record.
 */
typedef struct MisgradEpochLog {
  uint64_t epoch;
  uint64_t steps;
  /**
   * Cumulative training time in milliseconds.
   */
  double wall_ms;
  double train_loss;
  double eval_loss;
  /**
   * Classification error rate, NaN for regression.
   */
  double eval_error;
  double min_weight;
  double max_weight;
  double ridge;
  double condition;
  bool biased;
} MisgradEpochLog;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread. Never null.
 */
const char *misgrad_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *misgrad_version(void);

/**
 * Build a trainer from a flat JSON run configuration. Generated task data
 * (synthetic images, IDX files) is written under `scratch_dir`.
 *
 * # Safety
 * `config_json` and `scratch_dir` must be NUL-terminated strings; `out`
 * must be writable.
 */
enum MisgradStatus misgrad_trainer_new(const char *config_json,
                                       const char *scratch_dir,
                                       struct MisgradTrainer **out);

/**
 * # Safety
 * `trainer` must come from [`misgrad_trainer_new`] and not be used afterwards. Null is ignored.
 */
void misgrad_trainer_free(struct MisgradTrainer *trainer);

/**
 * Train one epoch and report its log record.
 *
 * # Safety
 * `trainer` must be a live handle; `log` may be null.
 */
enum MisgradStatus misgrad_trainer_run_epoch(struct MisgradTrainer *trainer,
                                             struct MisgradEpochLog *log);

/**
 * Number of epochs completed so far.
 *
 * # Safety
 * `trainer` must be a live handle or null (returns 0).
 */
uintptr_t misgrad_trainer_epochs_done(const struct MisgradTrainer *trainer);

/**
 * Number of network parameters, or 0 for a null handle.
 *
 * # Safety
 * `trainer` must be a live handle or null.
 */
uintptr_t misgrad_trainer_param_count(const struct MisgradTrainer *trainer);

/**
 * Copy the flattened parameters into `buf`, which must hold exactly
 * [`misgrad_trainer_param_count`] values.
 *
 * # Safety
 * `trainer` must be a live handle; `buf` must be writable for `len` doubles.
 */
enum MisgradStatus misgrad_trainer_params(const struct MisgradTrainer *trainer,
                                          double *buf,
                                          uintptr_t len);

/**
 * Evaluate the network on one input vector, writing `out_len` outputs.
 *
 * # Safety
 * `trainer` must be a live handle; `x` readable for `x_len` doubles and
 * `out` writable for `out_len` doubles.
 */
enum MisgradStatus misgrad_trainer_predict(const struct MisgradTrainer *trainer,
                                           const double *x,
                                           uintptr_t x_len,
                                           double *out,
                                           uintptr_t out_len);

/**
 * Normalize non-negative weights into a distribution.
 *
 * # Safety
 * `weights` must be readable for `len` doubles; `out` must be writable.
 */
enum MisgradStatus misgrad_pdf_new(const double *weights, uintptr_t len, struct MisgradPdf **out);

/**
 * Uniform distribution over `len` items.
 *
 * # Safety
 * `out` must be writable.
 */
enum MisgradStatus misgrad_pdf_uniform(uintptr_t len, struct MisgradPdf **out);

/**
 * # Safety
 * `pdf` must come from a `misgrad_pdf_*` constructor and not be used afterwards. Null is ignored.
 */
void misgrad_pdf_free(struct MisgradPdf *pdf);

/**
 * Number of items, or 0 for a null handle.
 *
 * # Safety
 * `pdf` must be a live handle or null.
 */
uintptr_t misgrad_pdf_len(const struct MisgradPdf *pdf);

/**
 * Probability of item `index`.
 *
 * # Safety
 * `pdf` must be a live handle; `out` must be writable.
 */
enum MisgradStatus misgrad_pdf_prob(const struct MisgradPdf *pdf, uintptr_t index, double *out);

/**
 * Draw `count` indices with replacement using a generator seeded by `seed`.
 * The same seed always yields the same draws.
 *
 * # Safety
 * `pdf` must be a live handle; `out` must be writable for `count` values.
 */
enum MisgradStatus misgrad_pdf_sample(const struct MisgradPdf *pdf,
                                      uint64_t seed,
                                      uintptr_t count,
                                      uintptr_t *out);

/**
 * Create an empty system for `techniques` pdfs with per-technique sample
 * counts `counts`, integrands of dimension `dim`, and momentum `beta`.
 *
 * # Safety
 * `counts` must be readable for `techniques` values; `out` must be writable.
 */
enum MisgradStatus misgrad_mis_new(const uintptr_t *counts,
                                   uintptr_t techniques,
                                   uintptr_t dim,
                                   double beta,
                                   struct MisgradMisSystem **out);

/**
 * # Safety
 * `system` must come from [`misgrad_mis_new`] and not be used afterwards. Null is ignored.
 */
void misgrad_mis_free(struct MisgradMisSystem *system);

/**
 * Start a new mini-batch: scale the accumulated system by `beta`.
 *
 * # Safety
 * `system` must be a live handle.
 */
enum MisgradStatus misgrad_mis_decay(struct MisgradMisSystem *system);

/**
 * Add one drawn sample (data index `index`, integrand `value` of length
 * `dim`) given the current technique pdfs.
 *
 * # Safety
 * `system` must be a live handle; `value` readable for `dim` doubles;
 * `pdfs` readable for `techniques` live pdf handles.
 */
enum MisgradStatus misgrad_mis_add_sample(struct MisgradMisSystem *system,
                                          uintptr_t index,
                                          const double *value,
                                          uintptr_t dim,
                                          const struct MisgradPdf *const *pdfs,
                                          uintptr_t techniques);

/**
 * Solve the system with relative ridge `ridge` and write the estimate of
 * the integral (length `dim`).
 *
 * # Safety
 * `system` must be a live handle; `out` writable for `dim` doubles.
 */
enum MisgradStatus misgrad_mis_estimate(const struct MisgradMisSystem *system,
                                        double ridge,
                                        double *out,
                                        uintptr_t dim);

/**
 * Solve `(A + ridge·I) x = b` for a symmetric positive semi-definite
 * row-major `n`×`n` matrix `A`.
 *
 * # Safety
 * `a` readable for `n*n` doubles; `b` readable and `x` writable for `n` doubles.
 */
enum MisgradStatus misgrad_solve_regularized(const double *a,
                                             const double *b,
                                             uintptr_t n,
                                             double ridge,
                                             double *x);

/**
 * Balance-heuristic weights `n_j p_j(x) / Σ_k n_k p_k(x)` of data index
 * `index` for each of `techniques` pdfs.
 *
 * # Safety
 * `pdfs` readable for `techniques` live handles; `counts` readable and
 * `out` writable for `techniques` values.
 */
enum MisgradStatus misgrad_balance_weights(uintptr_t index,
                                           const struct MisgradPdf *const *pdfs,
                                           const uintptr_t *counts,
                                           uintptr_t techniques,
                                           double *out);

/**
 * Closed-form softmax cross-entropy importance `‖softmax(z) − onehot(class)‖`.
 *
 * # Safety
 * `logits` readable for `len` doubles; `out` writable.
 */
enum MisgradStatus misgrad_cross_entropy_importance(const double *logits,
                                                    uintptr_t len,
                                                    uintptr_t class_,
                                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MISGRAD_H */
