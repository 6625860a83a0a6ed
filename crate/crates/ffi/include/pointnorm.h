/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef POINTNORM_H
#define POINTNORM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Zero is success.
typedef enum PnStatus {
  PN_STATUS_OK = 0,
  PN_STATUS_NULL_POINTER = 1,
  PN_STATUS_INVALID_ARGUMENT = 2,
  PN_STATUS_CONFIG = 3,
  PN_STATUS_PARSE = 4,
  PN_STATUS_CHECKPOINT = 5,
  PN_STATUS_DIGEST_MISMATCH = 6,
  PN_STATUS_IO = 7,
  PN_STATUS_NUMERIC = 8,
  PN_STATUS_DIMENSION = 9,
  PN_STATUS_INDEX = 10,
  PN_STATUS_CONTRACT = 11,
  PN_STATUS_BUFFER_TOO_SMALL = 12,
  PN_STATUS_PANIC = 13,
} PnStatus;

// Built-in model sizes for `pn_model_new`.
typedef enum PnPreset {
  PN_PRESET_TINY = 0,
  PN_PRESET_FULL = 1,
} PnPreset;

// Opaque classifier handle.
typedef struct PnModel PnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL after a success.
// The pointer stays valid until the next call on the same thread.
const char *pn_last_error(void);

// Library version as a static NUL-terminated string.
const char *pn_version(void);

// Freshly initialized f32 model.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum PnStatus pn_model_new(enum PnPreset preset,
                           size_t num_classes,
                           size_t input_points,
                           uint64_t seed,
                           struct PnModel **out);

// Loads a checkpoint in the precision it was stored with.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer to
// writable storage for one handle.
enum PnStatus pn_model_load(const char *path, struct PnModel **out);

// Writes the model to `path`.
//
// # Safety
// `model` must come from this library and `path` must be NUL-terminated.
enum PnStatus pn_model_save(const struct PnModel *model, const char *path);

// Releases a handle. NULL is ignored.
//
// # Safety
// `model` must be NULL or a handle not yet freed.
void pn_model_free(struct PnModel *model);

// # Safety
// `model` must be a live handle; `out` must be writable.
enum PnStatus pn_model_num_classes(const struct PnModel *model, size_t *out);

// Points per cloud the model consumes.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum PnStatus pn_model_input_points(const struct PnModel *model, size_t *out);

// Class logits for `batch` clouds of `points` xyz triples each, laid out
// cloud after cloud. Clouds are resampled to the model's input size and
// scaled into the unit sphere like training data. `logits` receives
// `batch * num_classes` values, row per cloud.
//
// # Safety
// `coords` must hold `batch * points * 3` doubles and `logits` must have
// room for `logits_len` doubles.
enum PnStatus pn_model_predict(const struct PnModel *model,
                               const double *coords,
                               size_t batch,
                               size_t points,
                               double *logits,
                               size_t logits_len);

// Farthest point sampling of `m` indices out of `n` xyz points, seeded at
// the point farthest from the centroid.
//
// # Safety
// `coords` must hold `n * 3` doubles and `out` room for `m` indices.
enum PnStatus pn_farthest_point_sample(const double *coords, size_t n, size_t m, size_t *out);

// `k` nearest neighbors of each of the `m` sample indices, nearest first
// with ties broken by lower index. `out` receives `m * k` indices.
//
// # Safety
// `coords` must hold `n * 3` doubles, `samples` `m` indices, and `out`
// room for `m * k` indices.
enum PnStatus pn_knn_group(const double *coords,
                           size_t n,
                           const size_t *samples,
                           size_t m,
                           size_t k,
                           size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POINTNORM_H */
