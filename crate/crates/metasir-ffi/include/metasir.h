#ifndef METASIR_H
#define METASIR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * User class selector.
 */
typedef enum MetasirClass {
  MetasirClassCellCenter = 0,
  MetasirClassCellEdge = 1,
} MetasirClass;

/**
 * Meta-distribution inversion method selector.
 */
typedef enum MetasirMethod {
  /**
   * Exact Gil-Pelaez inversion of the complex-order moment.
   */
  MetasirMethodGilPelaez = 0,
  /**
   * Two-moment beta approximation.
   */
  MetasirMethodBeta = 1,
} MetasirMethod;

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum MetasirStatus {
  /**
   * Success.
   */
  MetasirStatusOk = 0,
  /**
   * A parameter violated its domain (density, exponent, probability...).
   */
  MetasirStatusDomain = 1,
  /**
   * A series or quadrature failed to converge to tolerance.
   */
  MetasirStatusNumeric = 2,
  /**
   * A null pointer was passed where a value was required.
   */
  MetasirStatusNullArgument = 3,
  /**
   * Unexpected internal failure (caught panic).
   */
  MetasirStatusInternal = 4,
} MetasirStatus;

/**
 * Opaque network-parameter handle.
 */
typedef struct MetasirParams MetasirParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create a parameter handle.
 *
 * `sir_threshold_db` is the SIR decoding threshold in dB; the remaining
 * arguments use linear units (densities per m², unitless exponent and
 * ratio threshold).  On success writes the new handle to `out` and returns
 * `MetasirStatusOk`; the handle must be released with
 * [`metasir_params_free`].
 *
 * # Safety
 * `out` must be a valid pointer to writable memory for one pointer.
 */
enum MetasirStatus metasir_params_new(double bs_density,
                                      double user_density,
                                      double pathloss_exponent,
                                      double ratio_threshold,
                                      double sir_threshold_db,
                                      struct MetasirParams **out);

/**
 * Release a handle created by [`metasir_params_new`]. Passing null is a
 * no-op.
 *
 * # Safety
 * `handle` must be null or a pointer returned by `metasir_params_new` that
 * has not been freed yet.
 */
void metasir_params_free(struct MetasirParams *handle);

/**
 * Compute the b-th moment of the conditional success probability for the
 * given class at base-station activity `q`, writing it to `out`.
 *
 * # Safety
 * `handle` must be a live handle; `out` must point to a writable `double`.
 */
enum MetasirStatus metasir_moment(const struct MetasirParams *handle,
                                  double order,
                                  double activity,
                                  enum MetasirClass class_,
                                  double *out);

/**
 * Mean local delay (average retransmissions until first success) for the
 * class at activity `q`; `INFINITY` marks the diverged phase.
 *
 * # Safety
 * `handle` must be a live handle; `out` must point to a writable `double`.
 */
enum MetasirStatus metasir_mean_local_delay(const struct MetasirParams *handle,
                                            double activity,
                                            enum MetasirClass class_,
                                            double *out);

/**
 * Critical activity of the delay phase transition.  When a transition
 * exists, writes it to `out_q` and sets `*out_finite_everywhere` to 0;
 * when the delay is finite for every q in (0,1], sets the flag to 1 and
 * `out_q` to 1.
 *
 * # Safety
 * `handle` must be a live handle; both out-pointers must be writable.
 */
enum MetasirStatus metasir_critical_activity(const struct MetasirParams *handle,
                                             enum MetasirClass class_,
                                             double *out_q,
                                             int32_t *out_finite_everywhere);

/**
 * Evaluate the meta-distribution CCDF at `len` reliability thresholds
 * `xs[0..len]` (each in (0,1), ascending), writing the values to
 * `out[0..len]`.
 *
 * # Safety
 * `handle` must be a live handle; `xs` and `out` must each point to `len`
 * readable/writable doubles.
 */
enum MetasirStatus metasir_meta_ccdf(const struct MetasirParams *handle,
                                     double activity,
                                     enum MetasirClass class_,
                                     enum MetasirMethod method,
                                     const double *xs,
                                     uintptr_t len,
                                     double *out);

/**
 * Library version as a static NUL-terminated string.
 */
const char *metasir_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METASIR_H */
