/* C interface for the stratum-occupancy inference engine. */

#ifndef STRATA_H
#define STRATA_H

/* Generated by cbindgen from the strata-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Width of one point row in [`strata_infer_points`] buffers.
 */
#define STRATA_POINT_DIM 9

/**
 * Result of every call in this interface.
 */
typedef enum StrataStatus {
  /**
   * Success.
   */
  STRATA_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  STRATA_STATUS_NULL_POINTER = 1,
  /**
   * An argument value was out of contract (sizes, counts, radius).
   */
  STRATA_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Input data failed validation (malformed file, bad point values).
   */
  STRATA_STATUS_INVALID_DATA = 3,
  /**
   * The filesystem refused a read or write.
   */
  STRATA_STATUS_IO_ERROR = 4,
  /**
   * A computation produced non-finite values.
   */
  STRATA_STATUS_NUMERIC_ERROR = 5,
  /**
   * An internal invariant failed.
   */
  STRATA_STATUS_INTERNAL_ERROR = 6,
} StrataStatus;

/**
 * Opaque handle to a loaded model bundle.
 */
typedef struct StrataModel StrataModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *strata_version(void);

/**
 * Message describing the most recent failure on this thread.
 *
 * The pointer stays valid until the next failing call on the same thread.
 * Never null; empty string when no failure has occurred.
 */
const char *strata_last_error(void);

/**
 * Loads a model bundle directory.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must point to
 * writable storage for one pointer.  On success `*out` owns the model and
 * must be released with [`strata_model_free`].
 */
enum StrataStatus strata_model_load(const char *path, struct StrataModel **out);

/**
 * Releases a model returned by [`strata_model_load`].
 *
 * # Safety
 * `model` must be null or a pointer previously returned by
 * [`strata_model_load`] that has not been freed; it must not be used
 * afterwards.
 */
void strata_model_free(struct StrataModel *model);

/**
 * Model kind: 0 = occupancy (has rasters), 1 = direct regression, −1 on a
 * null handle.
 *
 * # Safety
 * `model` must be null or a live handle from [`strata_model_load`].
 */
int strata_model_kind(const struct StrataModel *model);

/**
 * Raster side length of an occupancy model, 0 for direct-regression
 * models or a null handle.
 *
 * # Safety
 * `model` must be null or a live handle from [`strata_model_load`].
 */
size_t strata_raster_size(const struct StrataModel *model);

/**
 * Predicts the three stratum ratios from an in-memory point buffer.
 *
 * `points` holds `n` rows of [`STRATA_POINT_DIM`] doubles; `out_occupancy`
 * receives lower, medium, higher.
 *
 * # Safety
 * `model` must be a live handle; `points` must reference
 * `n * STRATA_POINT_DIM` readable doubles; `out_occupancy` must reference
 * three writable doubles.
 */
enum StrataStatus strata_infer_points(const struct StrataModel *model,
                                      const double *points,
                                      size_t n,
                                      double radius,
                                      double *out_occupancy);

/**
 * Predicts the three stratum ratios for a plot file on disk.
 *
 * # Safety
 * `model` must be a live handle; `path` must be a NUL-terminated UTF-8
 * string; `out_occupancy` must reference three writable doubles.
 */
enum StrataStatus strata_infer_file(const struct StrataModel *model,
                                    const char *path,
                                    double radius,
                                    double *out_occupancy);

/**
 * Predicts per-pixel occupancy rasters from an in-memory point buffer
 * (occupancy models only).
 *
 * `out_rasters` receives `3 * K * K` doubles (stratum-major: all lower
 * pixels row-major north-up, then medium, then higher), where `K` is
 * [`strata_raster_size`].  `out_len` must equal `3 * K * K`.
 *
 * # Safety
 * `model` must be a live handle; `points` must reference
 * `n * STRATA_POINT_DIM` readable doubles; `out_rasters` must reference
 * `out_len` writable doubles.
 */
enum StrataStatus strata_infer_raster(const struct StrataModel *model,
                                      const double *points,
                                      size_t n,
                                      double radius,
                                      double *out_rasters,
                                      size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STRATA_H */
