/* C interface to the metde density-evolution toolkit. */

#ifndef METDE_H
#define METDE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a call into the library.  Out-parameters are written only when
 * the status is `OK`; any other value leaves them untouched and records a
 * message retrievable through `metde_last_error`.
 */
enum MetdeStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : uint32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  /**
   * The call succeeded.
   */
  METDE_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  METDE_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  METDE_STATUS_INVALID_UTF8 = 2,
  /**
   * An argument value was outside its legal range.
   */
  METDE_STATUS_INVALID_ARGUMENT = 3,
  /**
   * An ensemble definition failed to parse or validate.
   */
  METDE_STATUS_PARSE_ERROR = 4,
  /**
   * Reading the ensemble file failed.
   */
  METDE_STATUS_IO_ERROR = 5,
  /**
   * The analysis itself failed (for example, no threshold bracket).
   */
  METDE_STATUS_COMPUTE_ERROR = 6,
  /**
   * An internal panic was caught at the boundary.
   */
  METDE_STATUS_PANIC = 7,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum MetdeStatus MetdeStatus;
#else
typedef uint32_t MetdeStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Analysis method selector, passed to `metde_threshold` and `metde_evolve`
 * as a `uint32_t` holding one of these values.
 */
enum MetdeMethod
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : uint32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  /**
   * Full density evolution over quantized densities.
   */
  METDE_METHOD_FULL = 0,
  /**
   * Gaussian approximation tracking message means.
   */
  METDE_METHOD_MEAN = 1,
  /**
   * Gaussian approximation tracking error probabilities.
   */
  METDE_METHOD_BER = 2,
  /**
   * Reciprocal-channel approximation.
   */
  METDE_METHOD_RCA = 3,
  /**
   * Full density evolution handing over to the mean recursion.
   */
  METDE_METHOD_HYBRID = 4,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum MetdeMethod MetdeMethod;
#else
typedef uint32_t MetdeMethod;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * An ensemble behind the C interface.  Create with the `metde_ensemble_*`
 * constructors, release with `metde_ensemble_free`; the layout is private.
 */
typedef struct MetdeEnsemble MetdeEnsemble;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads an ensemble definition from a JSON file at `path` into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for writing one
 * pointer; the returned handle must be released with `metde_ensemble_free`.
 */
MetdeStatus metde_ensemble_from_file(const char *path, struct MetdeEnsemble **out);

/**
 * Parses an ensemble definition from a JSON string into `*out`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` valid for writing one
 * pointer; the returned handle must be released with `metde_ensemble_free`.
 */
MetdeStatus metde_ensemble_from_json(const char *json, struct MetdeEnsemble **out);

/**
 * Builds the regular single-edge-type ensemble with the given variable and
 * check degrees into `*out`.
 *
 * # Safety
 * `out` must be valid for writing one pointer; the returned handle must be
 * released with `metde_ensemble_free`.
 */
MetdeStatus metde_ensemble_regular(uint32_t variable_degree,
                                   uint32_t check_degree,
                                   struct MetdeEnsemble **out);

/**
 * Releases an ensemble handle.  Passing null is a no-op; passing the same
 * handle twice is undefined behavior.
 *
 * # Safety
 * `ensemble` must be null or a handle produced by this library that has
 * not been freed yet.
 */
void metde_ensemble_free(struct MetdeEnsemble *ensemble);

/**
 * Design rate of the ensemble, or NaN for a null handle.
 *
 * # Safety
 * `ensemble` must be null or a live handle produced by this library.
 */
double metde_ensemble_rate(const struct MetdeEnsemble *ensemble);

/**
 * Number of edge types in the ensemble, or 0 for a null handle.
 *
 * # Safety
 * `ensemble` must be null or a live handle produced by this library.
 */
uint32_t metde_ensemble_edge_types(const struct MetdeEnsemble *ensemble);

/**
 * Finds the decoding threshold of `ensemble` under `method` (a
 * `MetdeMethod` value) and writes it to `*out_sigma`.  `tolerance` is the
 * bisection stopping width in absolute noise units; pass 0 for the default.
 *
 * # Safety
 * `ensemble` must be a live handle and `out_sigma` valid for writing one
 * double.
 */
MetdeStatus metde_threshold(const struct MetdeEnsemble *ensemble,
                            uint32_t method,
                            double tolerance,
                            double *out_sigma);

/**
 * Runs one evolution of `ensemble` at noise level `sigma` under `method`
 * (a `MetdeMethod` value).  `max_iterations` caps the run; pass 0 for the
 * default.  Each non-null out-parameter receives its part of the outcome:
 * whether the run converged (0 or 1), the iterations executed, and the
 * final error probability.
 *
 * # Safety
 * `ensemble` must be a live handle; each out-parameter must be null or
 * valid for writing its type.
 */
MetdeStatus metde_evolve(const struct MetdeEnsemble *ensemble,
                         double sigma,
                         uint32_t method,
                         uint32_t max_iterations,
                         int32_t *out_converged,
                         uint32_t *out_iterations,
                         double *out_final_ber);

/**
 * Writes the Shannon-limit noise level for a binary-input AWGN channel at
 * the given code rate to `*out_sigma`.
 *
 * # Safety
 * `out_sigma` must be valid for writing one double.
 */
MetdeStatus metde_shannon_sigma(double rate, double *out_sigma);

/**
 * Message describing the most recent failure on the calling thread, or an
 * empty string if nothing failed yet.  The pointer stays valid until the
 * next failing call on the same thread.
 */
const char *metde_last_error(void);

/**
 * Library version as a static string.
 */
const char *metde_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METDE_H */
