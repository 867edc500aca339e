#ifndef GRAPHAU_PAIN_H
#define GRAPHAU_PAIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GraphauStatus {
  GRAPHAU_STATUS_OK = 0,
  GRAPHAU_STATUS_NULL_POINTER = 1,
  GRAPHAU_STATUS_INVALID_ARGUMENT = 2,
  GRAPHAU_STATUS_BUFFER_TOO_SMALL = 3,
  GRAPHAU_STATUS_CONFIG = 4,
  GRAPHAU_STATUS_DATA = 5,
  GRAPHAU_STATUS_NUMERIC = 6,
  GRAPHAU_STATUS_IO = 7,
  GRAPHAU_STATUS_INCOMPATIBLE_CHECKPOINT = 8,
  GRAPHAU_STATUS_PANIC = 9,
} GraphauStatus;

/**
 * Loaded network parameters plus their configuration.
 */
typedef struct GraphauModel GraphauModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length
 * excluding the terminator.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null with `len == 0`.
 */
size_t graphau_last_error_message(char *buf, size_t len);

/**
 * PSPI from parallel arrays of AU codes and intensities. AUs 4, 6, 7, 9,
 * 10 and 43 must all be present.
 *
 * # Safety
 * `codes` and `intensities` must each point to `n` readable values.
 */
enum GraphauStatus graphau_compute_pspi(const uint8_t *codes,
                                        const int32_t *intensities,
                                        size_t n,
                                        uint8_t *out_pspi);

/**
 * Pain category index of a PSPI score under the 3- or 4-category scheme.
 *
 * # Safety
 * `out_category` must be a valid pointer.
 */
enum GraphauStatus graphau_categorize(int32_t pspi, uint32_t classes, uint32_t *out_category);

/**
 * Inverse-frequency class weights from per-class rates; the weights sum to `n`.
 *
 * # Safety
 * `rates` and `out_weights` must each point to `n` values.
 */
enum GraphauStatus graphau_class_weights(const double *rates, size_t n, double *out_weights);

/**
 * Freshly initialized CPU-sized model with 3 or 4 pain classes.
 *
 * # Safety
 * `out_model` must be a valid pointer; the handle it receives must be
 * released with [`graphau_model_free`].
 */
enum GraphauStatus graphau_model_new_desk(uint64_t seed,
                                          uint32_t classes,
                                          struct GraphauModel **out_model);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out_model` a valid pointer.
 */
enum GraphauStatus graphau_model_load(const char *path, struct GraphauModel **out_model);

/**
 * # Safety
 * `model` must come from this library and `path` be NUL-terminated.
 */
enum GraphauStatus graphau_model_save(const struct GraphauModel *model, const char *path);

/**
 * Network geometry: input side in pixels, pain classes and AU nodes.
 *
 * # Safety
 * `model` must come from this library; the out pointers may be null.
 */
enum GraphauStatus graphau_model_shape(const struct GraphauModel *model,
                                       size_t *out_input_side,
                                       size_t *out_classes,
                                       size_t *out_aus);

/**
 * Inference on one image: `side * side * 3` floats in [0, 1], row-major
 * with interleaved RGB. Writes the pain logits and the AU occurrence
 * probabilities.
 *
 * # Safety
 * Each pointer must reference the stated number of floats.
 */
enum GraphauStatus graphau_model_forward(const struct GraphauModel *model,
                                         const float *image,
                                         size_t image_len,
                                         float *out_logits,
                                         size_t logits_len,
                                         float *out_au_probs,
                                         size_t au_probs_len);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void graphau_model_free(struct GraphauModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRAPHAU_PAIN_H */
