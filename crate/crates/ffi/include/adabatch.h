#ifndef ADABATCH_H
#define ADABATCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AbStatus {
  AB_STATUS_OK = 0,
  AB_STATUS_NULL_POINTER = 1,
  AB_STATUS_INVALID_ARGUMENT = 2,
  AB_STATUS_CONFIG = 3,
  AB_STATUS_IO = 4,
  AB_STATUS_DATA = 5,
  AB_STATUS_RUN = 6,
  AB_STATUS_DEGENERATE_GRADIENT = 7,
  AB_STATUS_PANIC = 8,
} AbStatus;

typedef enum AbObjective {
  AB_OBJECTIVE_LEAST_SQUARES = 0,
  AB_OBJECTIVE_LOGISTIC = 1,
  AB_OBJECTIVE_NLLSQ = 2,
} AbObjective;

/**
 * How a run ended.
 */
typedef enum AbRunStatus {
  AB_RUN_STATUS_RUNNING = 0,
  AB_RUN_STATUS_BUDGET_EXHAUSTED = 1,
  AB_RUN_STATUS_CONVERGED = 2,
  AB_RUN_STATUS_NON_FINITE = 3,
  AB_RUN_STATUS_LINE_SEARCH_DIVERGED = 4,
  AB_RUN_STATUS_CAP_REACHED = 5,
} AbRunStatus;

/**
 * A dataset together with the objective its labels were prepared for.
 */
typedef struct AbDataset AbDataset;

typedef struct AbTrace AbTrace;

/**
 * One recorded iterate. Missing values are NaN; `batch_size` is 0 on the
 * initial row.
 */
typedef struct AbTraceRow {
  uint64_t iter;
  uint64_t samples;
  double epoch;
  double f;
  double grad_norm_full;
  double grad_norm_batch;
  double step_size;
  size_t batch_size;
  double inner_lhs;
  double inner_rhs;
  double orth_lhs;
  double orth_rhs;
} AbTraceRow;

typedef struct AbTestConfig {
  double theta;
  double nu;
  double omega;
} AbTestConfig;

/**
 * Result of the approximated inner-product and orthogonality tests.
 * `recommended_size` is 0 when both tests pass.
 */
typedef struct AbTestVerdict {
  bool inner_pass;
  bool orth_pass;
  size_t recommended_size;
  double lhs_inner;
  double rhs_inner;
  double lhs_orth;
  double rhs_orth;
} AbTestVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ab_version(void);

/**
 * Message of the last failed call on this thread ("" after a success).
 * The pointer stays valid until the next `ab_*` call on the same thread.
 */
const char *ab_last_error_message(void);

/**
 * Loads a LIBSVM file with labels mapped for `objective`. `n_features` of 0
 * infers the dimension from the largest index.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AbStatus ab_dataset_from_libsvm(const char *path,
                                     enum AbObjective objective,
                                     size_t n_features,
                                     struct AbDataset **out);

/**
 * Seeded Gaussian data. Least squares gets the noisy linear targets;
 * the classification objectives get their sign.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AbStatus ab_dataset_synthetic(enum AbObjective objective,
                                   size_t n_samples,
                                   size_t n_features,
                                   double noise_std,
                                   uint64_t seed,
                                   struct AbDataset **out);

/**
 * Copies a row-major `n_samples x n_features` matrix and its labels.
 *
 * # Safety
 * `features` must hold `n_samples * n_features` doubles, `labels`
 * `n_samples` doubles, and `out` must be a valid pointer.
 */
enum AbStatus ab_dataset_from_dense(enum AbObjective objective,
                                    const double *features,
                                    const double *labels,
                                    size_t n_samples,
                                    size_t n_features,
                                    struct AbDataset **out);

/**
 * Number of rows, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t ab_dataset_n_samples(const struct AbDataset *dataset);

/**
 * Number of features, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t ab_dataset_n_features(const struct AbDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a handle not freed before.
 */
void ab_dataset_free(struct AbDataset *dataset);

/**
 * Runs one optimizer configuration, given as TOML with the same keys as a
 * `[runs.<name>]` table of an experiment file. Runs that diverge still
 * return `AB_STATUS_OK`; inspect [`ab_trace_status`].
 *
 * # Safety
 * `dataset` must be a live handle, `config_toml` a NUL-terminated string
 * and `out` a valid pointer.
 */
enum AbStatus ab_run(const struct AbDataset *dataset,
                     const char *config_toml,
                     struct AbTrace **out);

/**
 * # Safety
 * `trace` must be a live handle.
 */
enum AbRunStatus ab_trace_status(const struct AbTrace *trace);

/**
 * Number of recorded rows, or 0 for a null handle.
 *
 * # Safety
 * `trace` must be null or a live handle.
 */
size_t ab_trace_len(const struct AbTrace *trace);

/**
 * Copies row `index` into `out`.
 *
 * # Safety
 * `trace` must be a live handle and `out` a valid pointer.
 */
enum AbStatus ab_trace_row(const struct AbTrace *trace, size_t index, struct AbTraceRow *out);

/**
 * Copies the final weights into `out`, which must hold `len` doubles and
 * `len` must equal the dataset dimension.
 *
 * # Safety
 * `trace` must be a live handle and `out` must hold `len` doubles.
 */
enum AbStatus ab_trace_final_weights(const struct AbTrace *trace, double *out, size_t len);

/**
 * Writes the trace CSV to `path`.
 *
 * # Safety
 * `trace` must be a live handle and `path` a NUL-terminated string.
 */
enum AbStatus ab_trace_write_csv(const struct AbTrace *trace, const char *path);

/**
 * # Safety
 * `trace` must be null or a handle not freed before.
 */
void ab_trace_free(struct AbTrace *trace);

/**
 * AdaGrad step size `alpha / (beta + accumulated)^(1/2 + tau)`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AbStatus ab_adagrad_step_size(double alpha,
                                   double beta,
                                   double tau,
                                   double accumulated,
                                   double *out);

/**
 * Approximated inner-product and orthogonality tests on `batch_size`
 * per-sample gradients stored row-major in `rows` (`batch_size * dim`).
 *
 * # Safety
 * `rows` must hold `batch_size * dim` doubles; `config` and `out` must be
 * valid pointers.
 */
enum AbStatus ab_approx_tests(const double *rows,
                              size_t batch_size,
                              size_t dim,
                              const struct AbTestConfig *config,
                              struct AbTestVerdict *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADABATCH_H */
