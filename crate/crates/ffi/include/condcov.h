#ifndef CONDCOV_H
#define CONDCOV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum CondcovStatus {
  CONDCOV_STATUS_OK = 0,
  // Invalid setting or argument.
  CONDCOV_STATUS_CONFIG_ERROR = 1,
  // Input data rejected (too few rows, non-finite values, degenerate column).
  CONDCOV_STATUS_DATA_ERROR = 2,
  // Numerical failure during estimation.
  CONDCOV_STATUS_NUMERIC_ERROR = 3,
  // A required pointer argument was null.
  CONDCOV_STATUS_NULL_POINTER = 4,
  // The library panicked; this is a bug.
  CONDCOV_STATUS_PANIC = 5,
} CondcovStatus;

// Estimator settings.
typedef struct CondcovConfig CondcovConfig;

// Result of a full-matrix estimate.
typedef struct CondcovMatrixEstimate CondcovMatrixEstimate;

// Result of a single-entry estimate.
typedef struct CondcovPairEstimate {
  double t_hat;
  double c_hat;
  double ci_lo;
  double ci_hi;
  size_t n1;
  size_t n2;
  size_t basis_size;
} CondcovPairEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Returns a new configuration with default settings, or null on panic.
struct CondcovConfig *condcov_config_new(void);

// Releases a configuration. Null is ignored.
//
// # Safety
// `cfg` must be null or a handle from [`condcov_config_new`] not yet freed.
void condcov_config_free(struct CondcovConfig *cfg);

enum CondcovStatus condcov_config_set_seed(struct CondcovConfig *cfg, uint64_t seed);

// Sets the nominal interval level, strictly between 0 and 1.
enum CondcovStatus condcov_config_set_confidence(struct CondcovConfig *cfg, double level);

// Fixes the basis size; 0 restores the default `ceil(sqrt(n2))` rule.
enum CondcovStatus condcov_config_set_basis_size(struct CondcovConfig *cfg, size_t m);

enum CondcovStatus condcov_config_set_quad_order(struct CondcovConfig *cfg, size_t order);

// Sets the clipping range of the pilot density on the unit scale.
enum CondcovStatus condcov_config_set_clip(struct CondcovConfig *cfg, double lo, double hi);

// Estimates the full `p × p` matrix. On success `*out` receives a handle
// to release with [`condcov_matrix_estimate_free`].
//
// # Safety
// `x` must point to `n * p` values, `y` to `n`, and `out` must be writable.
enum CondcovStatus condcov_estimate_matrix(const double *x,
                                           const double *y,
                                           size_t n,
                                           size_t p,
                                           const struct CondcovConfig *cfg,
                                           struct CondcovMatrixEstimate **out);

// Estimates the single entry `(i, j)` (0-based) with its interval.
//
// # Safety
// `x` must point to `n * p` values, `y` to `n`, and `out` must be writable.
enum CondcovStatus condcov_estimate_pair(const double *x,
                                         const double *y,
                                         size_t n,
                                         size_t p,
                                         size_t i,
                                         size_t j,
                                         const struct CondcovConfig *cfg,
                                         struct CondcovPairEstimate *out);

// Releases an estimate. Null is ignored.
//
// # Safety
// `est` must be null or a handle from [`condcov_estimate_matrix`] not yet freed.
void condcov_matrix_estimate_free(struct CondcovMatrixEstimate *est);

// Number of X coordinates `p`, or 0 for a null handle.
size_t condcov_matrix_estimate_dim(const struct CondcovMatrixEstimate *est);

// Copies the estimated `Cov(E[X|Y])`, row-major, into `out[0 .. p * p]`.
//
// # Safety
// `out` must point to `len` writable values.
enum CondcovStatus condcov_matrix_estimate_cov(const struct CondcovMatrixEstimate *est,
                                               double *out,
                                               size_t len);

// Copies the estimated `E[E[X_i|Y] E[X_j|Y]]`, row-major, into `out[0 .. p * p]`.
//
// # Safety
// `out` must point to `len` writable values.
enum CondcovStatus condcov_matrix_estimate_t(const struct CondcovMatrixEstimate *est,
                                             double *out,
                                             size_t len);

// Copies the eigenvalues of the covariance estimate, descending, into `out[0 .. p]`.
//
// # Safety
// `out` must point to `len` writable values.
enum CondcovStatus condcov_matrix_estimate_eigenvalues(const struct CondcovMatrixEstimate *est,
                                                       double *out,
                                                       size_t len);

// Copies the eigenvectors into `out[0 .. p * p]`; row `k` is the vector of
// the `k`-th largest eigenvalue.
//
// # Safety
// `out` must point to `len` writable values.
enum CondcovStatus condcov_matrix_estimate_eigenvectors(const struct CondcovMatrixEstimate *est,
                                                        double *out,
                                                        size_t len);

// Serializes the estimate to JSON. On success `*out` receives a
// NUL-terminated string to release with [`condcov_string_free`].
//
// # Safety
// `out` must be writable.
enum CondcovStatus condcov_matrix_estimate_to_json(const struct CondcovMatrixEstimate *est,
                                                   char **out);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void condcov_string_free(char *s);

// Message of the last failed call on this thread, or null if the last
// call succeeded. The pointer stays valid until the next call on the
// same thread.
const char *condcov_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONDCOV_H */
