#ifndef CARMA_INDIRECT_H
#define CARMA_INDIRECT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CarmaEstimator {
  // GM data leg, least-squares simulation leg.
  CARMA_ESTIMATOR_INDIRECT = 0,
  // Least-squares data leg.
  CARMA_ESTIMATOR_LS = 1,
  CARMA_ESTIMATOR_QMLE = 2,
} CarmaEstimator;

typedef enum CarmaFamily {
  // CARMA(1,0) with parameter `a`: `A = [a]`, `c = [1]`.
  CARMA_FAMILY_CAR1 = 0,
  // CARMA(3,1) with parameter `(a1, a2, a3, c1, c0)`.
  CARMA_FAMILY_CARMA31 = 1,
} CarmaFamily;

typedef enum CarmaOutlierMode {
  CARMA_OUTLIER_MODE_REPLACEMENT = 0,
  CARMA_OUTLIER_MODE_ADDITIVE = 1,
} CarmaOutlierMode;

// Result codes of the C interface.
typedef enum CarmaStatus {
  CARMA_STATUS_OK = 0,
  CARMA_STATUS_NULL_POINTER = 1,
  CARMA_STATUS_INVALID_ARGUMENT = 2,
  // The model violates stationarity or identifiability, or a solve failed.
  CARMA_STATUS_NUMERICAL = 3,
  CARMA_STATUS_IO = 4,
  // A Rust panic was caught at the boundary.
  CARMA_STATUS_PANIC = 5,
} CarmaStatus;

// Opaque parameter estimate.
typedef struct CarmaEstimate CarmaEstimate;

// Opaque sampled series.
typedef struct CarmaSeries CarmaSeries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *carma_version(void);

// Message of the last failing call on this thread, or an empty string.
// The pointer stays valid until the next failing call on the same thread.
const char *carma_last_error(void);

// Wraps `n` observations on a grid of step `h`.
//
// # Safety
// `values` must point to `n` readable doubles; `out` must be writable.
enum CarmaStatus carma_series_from_values(const double *values,
                                          size_t n,
                                          double h,
                                          struct CarmaSeries **out);

// Simulates `n` observations of a Brownian-driven CARMA process with driver variance `sigma_l2`.
//
// # Safety
// `theta` must point to `dim` readable doubles; `out` must be writable.
enum CarmaStatus carma_series_simulate(enum CarmaFamily fam,
                                       const double *theta,
                                       size_t dim,
                                       size_t n,
                                       double h,
                                       double sigma_l2,
                                       uint64_t seed,
                                       struct CarmaSeries **out);

// Replaces the series by a copy with isolated outliers of constant value `xi`
// occurring with probability `gamma`.
//
// # Safety
// `series` must be a live handle.
enum CarmaStatus carma_series_contaminate(struct CarmaSeries *series,
                                          enum CarmaOutlierMode mode,
                                          double gamma,
                                          double xi,
                                          uint64_t seed);

// Number of observations, or 0 for a null handle.
//
// # Safety
// `series` must be null or a live handle.
size_t carma_series_len(const struct CarmaSeries *series);

// Copies up to `len` observations into `buf`.
//
// # Safety
// `series` must be a live handle and `buf` must have room for `len` doubles.
enum CarmaStatus carma_series_values(const struct CarmaSeries *series, double *buf, size_t len);

// # Safety
// `series` must be null or a handle not freed before.
void carma_series_free(struct CarmaSeries *series);

// Estimates the CARMA parameter of a series. `r` and `s` are ignored by the
// QMLE. With `nuisance_scale` nonzero the driver variance is not used to
// identify the parameter (only sensible for CARMA(1,0)).
//
// # Safety
// `series` must be a live handle; `out` must be writable.
enum CarmaStatus carma_estimate(const struct CarmaSeries *series,
                                enum CarmaFamily fam,
                                enum CarmaEstimator estimator,
                                size_t r,
                                size_t s,
                                double sigma_l2,
                                int32_t nuisance_scale,
                                uint64_t seed,
                                struct CarmaEstimate **out);

// Dimension of the estimated parameter, or 0 for a null handle.
//
// # Safety
// `est` must be null or a live handle.
size_t carma_estimate_dim(const struct CarmaEstimate *est);

// Copies up to `len` parameter components into `buf`.
//
// # Safety
// `est` must be a live handle and `buf` must have room for `len` doubles.
enum CarmaStatus carma_estimate_values(const struct CarmaEstimate *est, double *buf, size_t len);

// Objective value at the estimate; NaN for a null handle.
//
// # Safety
// `est` must be null or a live handle.
double carma_estimate_objective(const struct CarmaEstimate *est);

// 1 when the fit counts as failed (non-convergence or boundary optimum), 0 otherwise, -1 for null.
//
// # Safety
// `est` must be null or a live handle.
int32_t carma_estimate_failed(const struct CarmaEstimate *est);

// # Safety
// `est` must be null or a handle not freed before.
void carma_estimate_free(struct CarmaEstimate *est);

// Robust GM fit of an AR(`r`) model: writes `r` coefficients to `pis` and the scale to `sigma`.
//
// # Safety
// `series` must be a live handle, `pis` must have room for `r` doubles and `sigma` must be writable.
enum CarmaStatus carma_gm_fit(const struct CarmaSeries *series,
                              size_t r,
                              double *pis,
                              double *sigma);

// Runs every experiment of a TOML or JSON config file and writes one CSV
// table per experiment into `out_dir`; when null, the config's `out_dir` or `out`.
// `threads == 0` picks the default worker count.
//
// # Safety
// `config_path` must be a NUL-terminated string; `out_dir` must be null or one.
enum CarmaStatus carma_run_config(const char *config_path, size_t threads, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CARMA_INDIRECT_H */
