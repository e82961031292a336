#ifndef TINYDISTILL_H
#define TINYDISTILL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum TdStatus {
  TD_STATUS_OK = 0,
  TD_STATUS_NULL_POINTER = 1,
  TD_STATUS_INVALID_ARGUMENT = 2,
  TD_STATUS_BUFFER_TOO_SMALL = 3,
  TD_STATUS_IO = 4,
  TD_STATUS_CORRUPT = 5,
  TD_STATUS_CONFIG_MISMATCH = 6,
  TD_STATUS_SHAPE = 7,
  TD_STATUS_PANIC = 8,
  TD_STATUS_OTHER = 9,
} TdStatus;

/**
 * Opaque encoder handle created by [`td_encoder_load`].
 */
typedef struct TdEncoder TdEncoder;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next tinydistill call on the same thread.
 */
const char *td_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *td_version(void);

/**
 * Loads an encoder checkpoint and stores a new handle in `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` a writable pointer.
 * The handle must be released with [`td_encoder_free`].
 */
enum TdStatus td_encoder_load(const char *path, struct TdEncoder **out);

/**
 * Releases a handle from [`td_encoder_load`]. NULL is ignored.
 *
 * # Safety
 * `encoder` must be NULL or a live handle that is not used afterwards.
 */
void td_encoder_free(struct TdEncoder *encoder);

/**
 * Embedding width (the encoder's hidden dimension), or 0 for NULL.
 *
 * # Safety
 * `encoder` must be NULL or a live handle.
 */
size_t td_encoder_dim(const struct TdEncoder *encoder);

/**
 * Input size the encoder expects.
 *
 * # Safety
 * `encoder` must be a live handle; `height` and `width` writable pointers.
 */
enum TdStatus td_encoder_image_size(const struct TdEncoder *encoder, size_t *height, size_t *width);

/**
 * Mean-pooled embedding of one grayscale image with values in [0, 1].
 *
 * # Safety
 * `pixels` must point to `height * width` doubles and `out` to `out_len`
 * writable doubles (at least [`td_encoder_dim`]).
 */
enum TdStatus td_encoder_embed(const struct TdEncoder *encoder,
                               const double *pixels,
                               size_t height,
                               size_t width,
                               double *out,
                               size_t out_len);

/**
 * Replaces a seeded choice of `round(ratio * P)` of the `P` patches with
 * the image mean. Writes the masked image to `out_pixels`, optionally the
 * per-patch mask (row-major, 1 = masked) to `mask_out`, and the masked
 * patch count to `masked_count`.
 *
 * # Safety
 * `pixels` and `out_pixels` must hold `height * width` doubles; `mask_out`
 * and `masked_count` may be NULL.
 */
enum TdStatus td_spatial_mask(const double *pixels,
                              size_t height,
                              size_t width,
                              size_t patch_size,
                              double ratio,
                              uint64_t seed,
                              double *out_pixels,
                              size_t out_len,
                              uint8_t *mask_out,
                              size_t mask_len,
                              size_t *masked_count);

/**
 * Band-stop masks `round(ratio * E)` magnitude bins, where `E` counts the
 * bins outside the preserved low-frequency centre, favouring
 * `bands_per_mask` of `num_bands` radial bands; phase is kept. Outputs as
 * for [`td_spatial_mask`], with the mask over centred frequency bins.
 *
 * # Safety
 * As for [`td_spatial_mask`].
 */
enum TdStatus td_frequency_mask(const double *pixels,
                                size_t height,
                                size_t width,
                                size_t num_bands,
                                size_t bands_per_mask,
                                double ratio,
                                uint64_t seed,
                                double *out_pixels,
                                size_t out_len,
                                uint8_t *mask_out,
                                size_t mask_len,
                                size_t *masked_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TINYDISTILL_H */
