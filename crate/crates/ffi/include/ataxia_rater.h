#ifndef ATAXIA_RATER_H
#define ATAXIA_RATER_H

/* Generated by cbindgen from ataxia-rater-ffi; edit the Rust source instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum ArStatus {
  AR_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  AR_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument had the wrong size or an out-of-range value.
   */
  AR_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The model JSON could not be parsed or failed validation.
   */
  AR_STATUS_PARSE_FAILED = 3,
  /**
   * The computation itself rejected the input.
   */
  AR_STATUS_COMPUTE_FAILED = 4,
} ArStatus;

/**
 * Opaque trained-model handle.
 */
typedef struct ArModel ArModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version of the library as a static NUL-terminated string.
 */
const char *ar_version(void);

/**
 * Length of the feature vector the model consumes.
 */
size_t ar_feature_count(void);

/**
 * Canonical name of feature `index`, or null when out of range. The
 * returned string is static.
 */
const char *ar_feature_name(size_t index);

/**
 * Message describing the most recent failure on this thread; empty until a
 * call fails. Valid until the next failing call on the same thread.
 */
const char *ar_last_error(void);

/**
 * Parses and validates a model from NUL-terminated JSON, writing a handle
 * to `out`. The handle must be released with [`ar_model_free`].
 *
 * # Safety
 * `json` must point to a NUL-terminated string and `out` to writable
 * storage for one pointer.
 */
enum ArStatus ar_model_from_json(const char *json, struct ArModel **out);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle produced by [`ar_model_from_json`] that
 * has not been freed already.
 */
void ar_model_free(struct ArModel *model);

/**
 * Raw (unrounded) severity prediction from a feature array of length
 * [`ar_feature_count`], in canonical feature order.
 *
 * # Safety
 * `model` must be a live handle, `features` must point to `len` doubles,
 * and `out` to one writable double.
 */
enum ArStatus ar_predict_raw(const struct ArModel *model,
                             const double *features,
                             size_t len,
                             double *out);

/**
 * Rounds a raw prediction to the nearest half point of the 0-4 scale.
 *
 * # Safety
 * `out` must point to one writable double.
 */
enum ArStatus ar_round_rating(double raw, double *out);

/**
 * Approximate entropy of `series` with embedding dimension `m` and
 * tolerance fraction `r` (of the series' standard deviation).
 *
 * # Safety
 * `series` must point to `len` doubles and `out` to one writable double.
 */
enum ArStatus ar_apen(const double *series, size_t len, size_t m, double r, double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* ATAXIA_RATER_H */
