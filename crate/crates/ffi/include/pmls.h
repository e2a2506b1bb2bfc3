#ifndef PMLS_H
#define PMLS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define PMLS_OK 0

/**
 * A required pointer was null or a buffer length was wrong.
 */
#define PMLS_ERR_ARGUMENT 1

#define PMLS_ERR_CONFIG 2

/**
 * Invalid data: non-finite values, too few rows, mismatched sizes.
 */
#define PMLS_ERR_DATA 3

/**
 * Rank deficiency or a solver failure.
 */
#define PMLS_ERR_NUMERICAL 4

/**
 * The requested quantity was not estimated by this fit.
 */
#define PMLS_ERR_ABSENT 5

/**
 * A Rust panic was caught at the boundary.
 */
#define PMLS_ERR_PANIC 6

#define PMLS_PIPELINE_PMLS_FULL 0

#define PMLS_PIPELINE_IMPROVED 1

#define PMLS_PIPELINE_BETA_ZERO 2

#define PMLS_PIPELINE_OLS_ONLY 3

#define PMLS_PREDICT_LS 0

#define PMLS_PREDICT_MAX 1

#define PMLS_PREDICT_MID 2

/**
 * Validated covariates and responses.
 */
typedef struct PmlsDataset PmlsDataset;

/**
 * Result of a fit.
 */
typedef struct PmlsFit PmlsFit;

/**
 * Fit settings. A NaN `lambda` or `lambda_tilde` and a zero `n_lambda`
 * or `n_lambda_tilde` mean "choose by cross-validation".
 */
typedef struct PmlsFitOptions {
  int32_t pipeline;
  double lambda;
  uintptr_t n_lambda;
  double lambda_tilde;
  uintptr_t n_lambda_tilde;
  double lambda1;
  double epsilon;
  bool signed_penalty;
  uint64_t cv_seed;
  uintptr_t cv_folds;
  /**
   * Also estimate the lower expectation, needed for `mid` predictions.
   */
  bool lower;
} PmlsFitOptions;

typedef struct PmlsDiagnostic {
  uintptr_t n;
  uintptr_t m;
  double p;
  double bound;
  double asymptotic;
  double monte_carlo;
  double monte_carlo_se;
  uintptr_t trials;
} PmlsDiagnostic;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *pmls_last_error(void);

struct PmlsFitOptions pmls_fit_options_default(void);

/**
 * Copies an `n_rows x n_cols` row-major matrix and a response of length
 * `n_rows` into a validated dataset.
 *
 * # Safety
 * `x` and `y` must point to that many readable doubles and `out` must be
 * writable.
 */
int32_t pmls_dataset_new(const double *x,
                         uintptr_t n_rows,
                         uintptr_t n_cols,
                         const double *y,
                         struct PmlsDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle from [`pmls_dataset_new`] not yet freed.
 */
void pmls_dataset_free(struct PmlsDataset *ds);

/**
 * Fits the selected pipeline.
 *
 * # Safety
 * `ds` must be a live dataset handle, `options` null (defaults) or
 * readable, and `out` writable.
 */
int32_t pmls_fit(const struct PmlsDataset *ds,
                 const struct PmlsFitOptions *options,
                 struct PmlsFit **out);

/**
 * # Safety
 * `fit` must be null or a fit handle not yet freed.
 */
void pmls_fit_free(struct PmlsFit *fit);

/**
 * Number of coefficients, or 0 for a null handle.
 *
 * # Safety
 * `fit` must be null or a live fit handle.
 */
uintptr_t pmls_fit_n_cols(const struct PmlsFit *fit);

/**
 * Number of estimation rows, or 0 for a null handle.
 *
 * # Safety
 * `fit` must be null or a live fit handle.
 */
uintptr_t pmls_fit_n_rows(const struct PmlsFit *fit);

/**
 * Copies the coefficients into `out`, which must hold exactly
 * [`pmls_fit_n_cols`] values.
 *
 * # Safety
 * `fit` must be a live fit handle and `out` writable for `len` doubles.
 */
int32_t pmls_fit_beta(const struct PmlsFit *fit, double *out, uintptr_t len);

/**
 * Copies `Y_i - beta^T X_i - mu_upper` into `out`, which must hold
 * exactly [`pmls_fit_n_rows`] values.
 *
 * # Safety
 * `fit` must be a live fit handle and `out` writable for `len` doubles.
 */
int32_t pmls_fit_residuals(const struct PmlsFit *fit, double *out, uintptr_t len);

/**
 * Second-step estimate of the upper expectation.
 *
 * # Safety
 * `fit` must be a live fit handle and `out` writable.
 */
int32_t pmls_fit_mu_upper(const struct PmlsFit *fit, double *out);

/**
 * First-step intercept; `PMLS_ERR_ABSENT` for pipelines without one.
 *
 * # Safety
 * `fit` must be a live fit handle and `out` writable.
 */
int32_t pmls_fit_mu_star(const struct PmlsFit *fit, double *out);

/**
 * Lower expectation; `PMLS_ERR_ABSENT` unless the fit estimated it.
 *
 * # Safety
 * `fit` must be a live fit handle and `out` writable.
 */
int32_t pmls_fit_mu_lower(const struct PmlsFit *fit, double *out);

/**
 * Plug-in variance of the upper expectation estimate.
 *
 * # Safety
 * `fit` must be a live fit handle and `out` writable.
 */
int32_t pmls_fit_var_mu_upper(const struct PmlsFit *fit, double *out);

/**
 * Selection sizes of the first and second step.
 *
 * # Safety
 * `fit` must be a live fit handle; `first` and `second` writable.
 */
int32_t pmls_fit_n_selected(const struct PmlsFit *fit, uintptr_t *first, uintptr_t *second);

/**
 * Serializes the fit as JSON. Release the string with
 * [`pmls_string_free`].
 *
 * # Safety
 * `fit` must be a live fit handle and `out` writable.
 */
int32_t pmls_fit_to_json(const struct PmlsFit *fit, char **out);

/**
 * Restores a fit from [`pmls_fit_to_json`] output.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
int32_t pmls_fit_from_json(const char *json, struct PmlsFit **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void pmls_string_free(char *s);

/**
 * Predicts at `n_rows` new covariate rows into `out` (length `n_rows`).
 *
 * # Safety
 * `fit` must be a live fit handle, `x` readable for `n_rows * n_cols`
 * doubles and `out` writable for `n_rows` doubles.
 */
int32_t pmls_predict(const struct PmlsFit *fit,
                     const double *x,
                     uintptr_t n_rows,
                     uintptr_t n_cols,
                     int32_t mode,
                     double *out);

/**
 * Order-statistic bound with a seeded Monte-Carlo check.
 *
 * # Safety
 * `out` must be writable.
 */
int32_t pmls_diagnostic(uintptr_t n,
                        uintptr_t m,
                        uintptr_t trials,
                        uint64_t seed,
                        struct PmlsDiagnostic *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PMLS_H */
