#ifndef YPOSE_H
#define YPOSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum YposeStatus {
  YPOSE_STATUS_OK = 0,
  // A required pointer argument was NULL.
  YPOSE_STATUS_NULL_POINTER = 1,
  // A string was not UTF-8 or a size argument was out of range.
  YPOSE_STATUS_INVALID_ARGUMENT = 2,
  // Unknown variant or invalid spec text.
  YPOSE_STATUS_CONFIG = 3,
  // Malformed or incompatible checkpoint.
  YPOSE_STATUS_CHECKPOINT = 4,
  // File could not be read or written.
  YPOSE_STATUS_IO = 5,
  // Image could not be decoded or cropped.
  YPOSE_STATUS_IMAGE = 6,
  // Shape mismatch or numeric failure inside the network.
  YPOSE_STATUS_TENSOR = 7,
  // The caller's output buffer is smaller than required.
  YPOSE_STATUS_BUFFER_TOO_SMALL = 8,
  // A Rust panic was caught at the boundary.
  YPOSE_STATUS_PANIC = 9,
} YposeStatus;

// Opaque network handle.
typedef struct YposeModel YposeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ypose_version(void);

// Message of the last failed call on this thread, or NULL if none.
//
// The pointer stays valid until the next failing call or
// `ypose_clear_error` on the same thread.
const char *ypose_last_error(void);

// Forgets the last error message of this thread.
void ypose_clear_error(void);

// Builds a preset network (`ypose`, `ypose-lite`, `b0`, `b4`, `b5`,
// `mobilenet-v2` or `toy`) with weights drawn from `seed`.
//
// # Safety
// `variant` must be NULL or a NUL-terminated string and `out` must be NULL or
// writable. On success `*out` owns a handle to release with `ypose_model_free`.
enum YposeStatus ypose_model_build(const char *variant, uint64_t seed, struct YposeModel **out);

// Builds a network from key=value spec text (one `key=value` per line).
// A `variant` key selects the preset the other keys modify; the default is
// `ypose`.
//
// # Safety
// Same contract as `ypose_model_build`.
enum YposeStatus ypose_model_from_spec(const char *spec_text,
                                       uint64_t seed,
                                       struct YposeModel **out);

// Releases a handle. NULL is ignored.
//
// # Safety
// `model` must be NULL or a handle from this library that was not freed yet.
void ypose_model_free(struct YposeModel *model);

// Trainable parameter count and the count of non-trainable buffers (BN
// running statistics). Either output pointer may be NULL.
//
// # Safety
// `model` must be a live handle; outputs must be NULL or writable.
enum YposeStatus ypose_model_param_count(const struct YposeModel *model,
                                         uint64_t *trainable,
                                         uint64_t *buffers);

// Multiply-accumulates of one forward pass at `input_size`×`input_size`.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum YposeStatus ypose_model_mac_count(const struct YposeModel *model,
                                       uintptr_t input_size,
                                       uint64_t *out);

// Side length of the square input the network expects.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum YposeStatus ypose_model_input_size(const struct YposeModel *model, uintptr_t *out);

// Number of classification heads.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum YposeStatus ypose_model_head_count(const struct YposeModel *model, uintptr_t *out);

// Class count of head `head` (0 is the coarsest).
//
// # Safety
// `model` must be a live handle and `out` writable.
enum YposeStatus ypose_model_head_classes(const struct YposeModel *model,
                                          uintptr_t head,
                                          uintptr_t *out);

// Probabilities written per image: the sum of all head class counts.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum YposeStatus ypose_model_output_len(const struct YposeModel *model, uintptr_t *out);

// Eval-mode forward pass on `batch` standardized images in NCHW layout,
// `batch * 3 * s * s` floats where `s` is the input size. Writes, per image,
// every head's probabilities concatenated coarse to fine.
//
// # Safety
// `images` must point to `batch * 3 * s * s` readable floats and `probs` to
// `probs_len` writable floats.
enum YposeStatus ypose_model_predict(const struct YposeModel *model,
                                     const float *images,
                                     uintptr_t batch,
                                     float *probs,
                                     uintptr_t probs_len);

// Loads an image file, crops it to the detected person (unless `roi` is false
// or the image is `synthetic`), standardizes it and runs one forward pass.
// Output layout matches `ypose_model_predict` with a batch of one.
//
// # Safety
// `path` must be a NUL-terminated string and `probs` must point to
// `probs_len` writable floats.
enum YposeStatus ypose_model_predict_file(const struct YposeModel *model,
                                          const char *path,
                                          bool synthetic,
                                          bool roi,
                                          float *probs,
                                          uintptr_t probs_len);

// Writes the model (spec, weights and running statistics) to `path`.
//
// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum YposeStatus ypose_checkpoint_save(const struct YposeModel *model, const char *path);

// Rebuilds a model from a checkpoint written by `ypose_checkpoint_save` or the
// `ypose` command-line tool.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable. On success `*out`
// owns a handle to release with `ypose_model_free`.
enum YposeStatus ypose_checkpoint_load(const char *path, struct YposeModel **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* YPOSE_H */
