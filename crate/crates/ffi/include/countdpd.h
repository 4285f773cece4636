#ifndef COUNTDPD_H
#define COUNTDPD_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values are stable.
 */
typedef enum {
  CDPD_STATUS_OK = 0,
  CDPD_STATUS_NULL_POINTER = 1,
  CDPD_STATUS_INVALID_UTF8 = 2,
  CDPD_STATUS_BUFFER_TOO_SMALL = 3,
  CDPD_STATUS_PANIC = 4,
  CDPD_STATUS_DOMAIN = 10,
  CDPD_STATUS_TRUNCATION = 11,
  CDPD_STATUS_INFEASIBLE_PARAMS = 12,
  CDPD_STATUS_INVALID_SPEC = 13,
  CDPD_STATUS_NON_CONVERGENCE = 14,
  CDPD_STATUS_SINGULAR_INFORMATION = 15,
  CDPD_STATUS_GRID_EMPTY = 16,
  CDPD_STATUS_TUNE = 17,
  CDPD_STATUS_EXPLOSION = 18,
  CDPD_STATUS_SCENARIO_UNSTABLE = 19,
  CDPD_STATUS_DEGENERATE_SAMPLE = 20,
  CDPD_STATUS_PARSE = 21,
  CDPD_STATUS_NEGATIVE_COUNT = 22,
  CDPD_STATUS_NON_FINITE_COVARIATE = 23,
  CDPD_STATUS_IO = 24,
  CDPD_STATUS_JSON = 25,
} CdpdStatus;

/**
 * Observed counts and covariates.
 */
typedef struct CdpdDataset CdpdDataset;

/**
 * A fitted model.
 */
typedef struct CdpdFit CdpdFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *cdpd_version(void);

/**
 * Message for the last failed call on this thread, or null. Valid until the next call.
 */
const char *cdpd_last_error(void);

/**
 * Builds a dataset from `n` counts and a row-major `n × d_x` covariate block.
 * `x` may be null when `d_x` is 0.
 *
 * # Safety
 * `y` must point to `n` values and `x` to `n * d_x` values.
 */
CdpdStatus cdpd_dataset_new(const uint64_t *y,
                            size_t n,
                            const double *x,
                            size_t d_x,
                            CdpdDataset **out);

/**
 * Reads a `y,x1,...,xd` CSV file.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` writable.
 */
CdpdStatus cdpd_dataset_read_csv(const char *path, CdpdDataset **out);

/**
 * Simulates a dataset from a JSON-encoded simulation spec.
 *
 * # Safety
 * `spec_json` must be a nul-terminated string and `out` writable.
 */
CdpdStatus cdpd_simulate_json(const char *spec_json, CdpdDataset **out);

/**
 * Number of observations, or 0 for null.
 *
 * # Safety
 * `data` must be null or a live dataset handle.
 */
size_t cdpd_dataset_len(const CdpdDataset *data);

/**
 * Number of covariate columns, or 0 for null.
 *
 * # Safety
 * `data` must be null or a live dataset handle.
 */
size_t cdpd_dataset_covariate_dim(const CdpdDataset *data);

/**
 * # Safety
 * `data` must be null or a handle not yet freed.
 */
void cdpd_dataset_free(CdpdDataset *data);

/**
 * Fits the model with default options. `family` is `poisson`, `nb:<r>` or
 * `bernoulli`; `model` is `ingarch:<q>,<p>[:<transform>,...]` or `knot:<xi>`.
 *
 * # Safety
 * String arguments must be nul-terminated, `data` a live handle, `out` writable.
 */
CdpdStatus cdpd_fit(const CdpdDataset *data,
                    const char *family,
                    const char *model,
                    double alpha,
                    CdpdFit **out);

/**
 * Selects α over the default grid and returns the fit at the selected value.
 *
 * # Safety
 * As for [`cdpd_fit`]; `alpha_opt` may be null.
 */
CdpdStatus cdpd_tune(const CdpdDataset *data,
                     const char *family,
                     const char *model,
                     double *alpha_opt,
                     CdpdFit **out);

/**
 * Number of parameters, or 0 for null.
 *
 * # Safety
 * `fit` must be null or a live fit handle.
 */
size_t cdpd_fit_dim(const CdpdFit *fit);

/**
 * Objective value at the estimate, or NaN for null.
 *
 * # Safety
 * `fit` must be null or a live fit handle.
 */
double cdpd_fit_objective(const CdpdFit *fit);

/**
 * Copies θ̂ into `buf`, which must hold at least [`cdpd_fit_dim`] values.
 *
 * # Safety
 * `buf` must be writable for `len` values.
 */
CdpdStatus cdpd_fit_theta(const CdpdFit *fit, double *buf, size_t len);

/**
 * Copies the sandwich standard errors into `buf`.
 *
 * # Safety
 * `buf` must be writable for `len` values.
 */
CdpdStatus cdpd_fit_std_errors(const CdpdFit *fit, double *buf, size_t len);

/**
 * Full fit as JSON. Release the string with [`cdpd_string_free`].
 *
 * # Safety
 * `fit` must be a live handle and `out` writable.
 */
CdpdStatus cdpd_fit_to_json(const CdpdFit *fit, char **out);

/**
 * # Safety
 * `fit` must be null or a handle not yet freed.
 */
void cdpd_fit_free(CdpdFit *fit);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void cdpd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COUNTDPD_H */
