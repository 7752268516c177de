#ifndef STNET_H
#define STNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

#define STNET_OK 0

/**
 * A Rust panic was caught at the boundary.
 */
#define STNET_ERR_INTERNAL 1

#define STNET_ERR_SHAPE 2

#define STNET_ERR_NUMERIC_INPUT 3

#define STNET_ERR_ORACLE 4

#define STNET_ERR_CONFIG 5

#define STNET_ERR_USAGE 6

#define STNET_ERR_FORMAT 7

#define STNET_ERR_INTEGRITY 8

#define STNET_ERR_IMPORT 9

#define STNET_ERR_LABEL 10

#define STNET_ERR_EMPTY_CLIP 11

#define STNET_ERR_STRATIFICATION 12

#define STNET_ERR_DATA 13

#define STNET_ERR_DIVERGENCE 14

#define STNET_ERR_INSUFFICIENT_FRAMES 15

#define STNET_ERR_IO 16

/**
 * Reduced 16×24×24×3 configuration.
 */
#define STNET_PRESET_DESK 0

/**
 * Full-size 25×90×90×3 configuration.
 */
#define STNET_PRESET_FULL 1

/**
 * Opaque classifier handle.
 */
typedef struct StnetModel StnetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, empty after a success.
 * The pointer stays valid until the next stnet call on the same thread.
 */
const char *stnet_last_error(void);

/**
 * Static name of a status code, e.g. `"integrity"`.
 */
const char *stnet_status_name(int32_t code);

/**
 * Build a freshly initialized model. `variant` is a tag such as
 * `"c3d"` or `"lrcn_vgg"`; `preset` is `STNET_PRESET_DESK` or
 * `STNET_PRESET_FULL`.
 *
 * # Safety
 * `variant` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t stnet_model_build(const char *variant,
                          int32_t preset,
                          uint64_t seed,
                          struct StnetModel **out);

/**
 * Load a checkpoint written by `stnet_model_save` or the CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t stnet_model_load(const char *path, struct StnetModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
int32_t stnet_model_save(const struct StnetModel *model, const char *path);

/**
 * Release a handle. NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void stnet_model_free(struct StnetModel *model);

/**
 * Clip geometry `{frames, height, width, channels}`.
 *
 * # Safety
 * `out_dims` must point to 4 writable `size_t`.
 */
int32_t stnet_model_input_dims(const struct StnetModel *model, size_t *out_dims);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
int32_t stnet_model_param_count(const struct StnetModel *model, size_t *out);

/**
 * Eval-mode class probabilities `{nonviolent, violent}` for one clip of
 * `len` floats in `[T, H, W, C]` order, values in `[0, 1]`.
 *
 * # Safety
 * `clip` must point to `len` floats and `out_probs` to 2 writable floats.
 */
int32_t stnet_model_predict(const struct StnetModel *model,
                            const float *clip,
                            size_t len,
                            float *out_probs);

/**
 * Library version, static.
 */
const char *stnet_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STNET_H */
