#ifndef TIMEEMB_H
#define TIMEEMB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define TIMEEMB_OK 0

#define TIMEEMB_ERR_NULL 1

#define TIMEEMB_ERR_UTF8 2

#define TIMEEMB_ERR_IO 3

#define TIMEEMB_ERR_FORMAT 4

#define TIMEEMB_ERR_DIMENSION 5

#define TIMEEMB_ERR_NUMERIC 6

#define TIMEEMB_ERR_CONFIG 7

#define TIMEEMB_ERR_VERIFY 8

#define TIMEEMB_ERR_PANIC 99

/**
 * Opaque handle to a loaded model and its data scaler.
 */
typedef struct TimeembModel TimeembModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint file. On success `*out` owns a handle to release with `timeemb_model_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t timeemb_model_load(const char *path, struct TimeembModel **out);

/**
 * Like `timeemb_model_load`, from checkpoint JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t timeemb_model_from_json(const char *json, struct TimeembModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from a load function and not be used afterwards.
 */
void timeemb_model_free(struct TimeembModel *model);

/**
 * Lookback `L`, horizon `H` and channel count `D`. Any out pointer may be null.
 *
 * # Safety
 * `model` must be a live handle; non-null out pointers must be valid.
 */
int32_t timeemb_model_shape(const struct TimeembModel *model,
                            size_t *lookback,
                            size_t *horizon,
                            size_t *channels);

/**
 * Trainable parameter count, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t timeemb_model_param_count(const struct TimeembModel *model);

/**
 * Forecasts `H × D` values into `out` (row-major, time-major) from an `L × D`
 * window ending at global step `t_last`. When the checkpoint stores a scaler
 * and `raw_units` is non-zero, input and output are in the original data units.
 *
 * # Safety
 * `window` must point to `window_len` doubles and `out` to `out_len` doubles.
 */
int32_t timeemb_model_predict(const struct TimeembModel *model,
                              const double *window,
                              size_t window_len,
                              uint64_t t_last,
                              int32_t raw_units,
                              double *out,
                              size_t out_len);

/**
 * Runs the transform identities and gradient checks; `TIMEEMB_ERR_VERIFY` if any fails.
 */
int32_t timeemb_verify(uint64_t seed);

/**
 * Message of the last failure on this thread, or null. Valid until the next failing call.
 */
const char *timeemb_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TIMEEMB_H */
