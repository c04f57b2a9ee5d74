#ifndef EBM_ANOMALY_H
#define EBM_ANOMALY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  EBM_STATUS_OK = 0,
  EBM_STATUS_NULL_POINTER = 1,
  EBM_STATUS_INVALID_ARGUMENT = 2,
  EBM_STATUS_SHAPE_MISMATCH = 3,
  EBM_STATUS_NON_FINITE = 4,
  EBM_STATUS_IO = 5,
  EBM_STATUS_FORMAT = 6,
  EBM_STATUS_SINGLE_CLASS = 7,
  EBM_STATUS_DIVERGED = 8,
  EBM_STATUS_DATASET = 9,
  EBM_STATUS_IMAGE = 10,
  EBM_STATUS_BUFFER_TOO_SMALL = 11,
  EBM_STATUS_PANIC = 12,
} EbmStatus;

/**
 * Loaded network parameters.
 */
typedef struct EbmModel EbmModel;

/**
 * Loaded per-pixel gradient statistics.
 */
typedef struct EbmStats EbmStats;

/**
 * Image-level scores of one image.
 */
typedef struct {
  double energy;
  double raw;
  /**
   * Valid only when `has_standardized` is nonzero.
   */
  double standardized;
  int32_t has_standardized;
} EbmImageScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *ebm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ebm_version(void);

/**
 * Loads an `EBMCKPT1` checkpoint. Free the handle with [`ebm_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
EbmStatus ebm_model_load(const char *path, EbmModel **out);

/**
 * # Safety
 * `model` must come from [`ebm_model_load`] and not be used afterwards.
 */
void ebm_model_free(EbmModel *model);

/**
 * Square input shape the network reduces to a single energy.
 *
 * # Safety
 * All pointers must be valid.
 */
EbmStatus ebm_model_input_shape(const EbmModel *model, size_t *h, size_t *w, size_t *c);

/**
 * Scalar energy `E(x)`.
 *
 * # Safety
 * `image` must hold `h * w * c` doubles; `out` must be valid.
 */
EbmStatus ebm_energy(const EbmModel *model,
                     const double *image,
                     size_t h,
                     size_t w,
                     size_t c,
                     double *out);

/**
 * Gradient map `−∂E/∂x`, written as `h * w * c` doubles.
 *
 * # Safety
 * `image` must hold `h * w * c` doubles and `out` at least `out_len`.
 */
EbmStatus ebm_gradient_map(const EbmModel *model,
                           const double *image,
                           size_t h,
                           size_t w,
                           size_t c,
                           double *out,
                           size_t out_len);

/**
 * Loads an `EBMSTAT1` statistics file. Free with [`ebm_stats_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
EbmStatus ebm_stats_load(const char *path, EbmStats **out);

/**
 * # Safety
 * `stats` must come from [`ebm_stats_load`] and not be used afterwards.
 */
void ebm_stats_free(EbmStats *stats);

/**
 * Scores one image. `stats` may be null, in which case only the energy and
 * raw scores are produced. `raw_map` and `std_map` are optional `h * w`
 * outputs for the pixel score maps; `std_map` requires `stats`.
 *
 * # Safety
 * `image` must hold `h * w * c` doubles; non-null map buffers must hold
 * `map_len` doubles; `out` must be valid.
 */
EbmStatus ebm_score_image(const EbmModel *model,
                          const EbmStats *stats,
                          const double *image,
                          size_t h,
                          size_t w,
                          size_t c,
                          uint32_t r,
                          double *raw_map,
                          double *std_map,
                          size_t map_len,
                          EbmImageScores *out);

/**
 * AUROC of `n` scores against labels (nonzero = anomalous), ties counted
 * as one half.
 *
 * # Safety
 * `scores` and `labels` must each hold `n` elements; `out` must be valid.
 */
EbmStatus ebm_auroc(const double *scores, const uint8_t *labels, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EBM_ANOMALY_H */
