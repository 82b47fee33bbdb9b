#ifndef TENSOR_FACTOR_H
#define TENSOR_FACTOR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum TfStatus {
  TF_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  TF_STATUS_NULL_POINTER = 1,
  /**
   * Bad shape, rank, lag, method or buffer size.
   */
  TF_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Unreadable, malformed or degenerate input data.
   */
  TF_STATUS_DATA = 3,
  /**
   * Non-finite values or a failed numerical routine.
   */
  TF_STATUS_NUMERIC = 4,
  /**
   * A panic was caught inside the library.
   */
  TF_STATUS_PANIC = 5,
} TfStatus;

/**
 * Estimator codes accepted by [`tf_estimate`].
 */
typedef enum TfMethod {
  TF_METHOD_TOPUP = 0,
  TF_METHOD_TIPUP = 1,
  TF_METHOD_ITOPUP = 2,
  TF_METHOD_ITIPUP = 3,
  TF_METHOD_UP = 4,
} TfMethod;

/**
 * The result of one estimation.
 */
typedef struct TfEstimate TfEstimate;

/**
 * A tensor time series.
 */
typedef struct TfSeries TfSeries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tf_version(void);

/**
 * Message of the most recent failed call on this thread (empty if none).
 * Valid until the next failing call on the same thread.
 */
const char *tf_last_error(void);

/**
 * Builds a series of shape `dims[0..order]` and length `len` from
 * `data_len = prod(dims) * len` values.
 *
 * # Safety
 * `dims` and `data` must point to `order` and `data_len` readable values,
 * `out` to a writable handle slot.
 */
enum TfStatus tf_series_new(const size_t *dims,
                            size_t order,
                            size_t len,
                            const double *data,
                            size_t data_len,
                            struct TfSeries **out);

/**
 * Loads a series file: `.csv` as long CSV, anything else as dense binary.
 * Unobserved long-CSV cells are zero.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `out` a writable handle slot.
 */
enum TfStatus tf_series_load(const char *path, struct TfSeries **out);

/**
 * Releases a series; null is ignored.
 *
 * # Safety
 * `series` must come from this library and not be used afterwards.
 */
void tf_series_free(struct TfSeries *series);

/**
 * Order, length and (when `dims` is non-null) the shape of a series.
 *
 * # Safety
 * `series` must be a live handle; non-null outputs must be writable, `dims`
 * for `dims_cap` values.
 */
enum TfStatus tf_series_shape(const struct TfSeries *series,
                              size_t *dims,
                              size_t dims_cap,
                              size_t *order,
                              size_t *len);

/**
 * Estimates the loading spaces of `series`.
 *
 * `method` is a [`TfMethod`] code. `max_iter` and `iter_tol` apply to the
 * iterated methods only (`max_iter = 0` returns the starting estimate).
 * UP ignores `h0`.
 *
 * # Safety
 * `series` must be a live handle, `ranks` point to `nranks` values and
 * `out` to a writable handle slot.
 */
enum TfStatus tf_estimate(const struct TfSeries *series,
                          uint32_t method,
                          const size_t *ranks,
                          size_t nranks,
                          size_t h0,
                          size_t max_iter,
                          double iter_tol,
                          struct TfEstimate **out);

/**
 * Releases an estimate; null is ignored.
 *
 * # Safety
 * `est` must come from this library and not be used afterwards.
 */
void tf_estimate_free(struct TfEstimate *est);

/**
 * Orthonormal basis of mode `mode`, column-major `rows × cols`. With a
 * null `out` only the shape is reported.
 *
 * # Safety
 * `est` must be a live handle; non-null outputs must be writable, `out`
 * for `cap` values.
 */
enum TfStatus tf_estimate_basis(const struct TfEstimate *est,
                                size_t mode,
                                double *out,
                                size_t cap,
                                size_t *rows,
                                size_t *cols);

/**
 * Descending singular value ladder of mode `mode`. With a null `out` only
 * the length is reported.
 *
 * # Safety
 * As for [`tf_estimate_basis`].
 */
enum TfStatus tf_estimate_ladder(const struct TfEstimate *est,
                                 size_t mode,
                                 double *out,
                                 size_t cap,
                                 size_t *len);

/**
 * Sweeps used by an iterated method (0 otherwise).
 *
 * # Safety
 * `est` must be a live handle and `out` writable.
 */
enum TfStatus tf_estimate_iterations(const struct TfEstimate *est, size_t *out);

/**
 * Spectral-norm distance between the estimated projection of mode `mode`
 * and the projection onto the column space of `truth` (column-major
 * `rows × cols`, any full-rank basis).
 *
 * # Safety
 * `est` must be a live handle, `truth` point to `rows * cols` values and
 * `out` be writable.
 */
enum TfStatus tf_projection_distance(const struct TfEstimate *est,
                                     size_t mode,
                                     const double *truth,
                                     size_t rows,
                                     size_t cols,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TENSOR_FACTOR_H */
