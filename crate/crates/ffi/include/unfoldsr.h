#ifndef UNFOLDSR_H
#define UNFOLDSR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

#define USR_OK 0

#define USR_ERR_NULL_POINTER -1

#define USR_ERR_INVALID_UTF8 -2

#define USR_ERR_PANIC -3

#define USR_ERR_BAD_ARGUMENT -4

#define USR_ERR_INVALID_PARAMETER 1

#define USR_ERR_SHAPE 2

#define USR_ERR_DEGENERATE_INPUT 3

#define USR_ERR_NUMERIC_FAILURE 4

#define USR_ERR_UNINITIALIZED_GRADIENTS 5

#define USR_ERR_UNSUPPORTED 6

#define USR_ERR_BAD_MAGIC 7

#define USR_ERR_TRUNCATED 8

#define USR_ERR_MALFORMED_HEADER 9

#define USR_ERR_UNSUPPORTED_VERSION 10

#define USR_ERR_UNSUPPORTED_MAXVAL 11

#define USR_ERR_CONFIG_MISMATCH 12

#define USR_ERR_MISSING_DATA 13

#define USR_ERR_EMPTY_DATASET 14

#define USR_ERR_NAN_LOSS 15

#define USR_ERR_CONFIG 16

#define USR_ERR_IO 17

#define USR_MODE_L1 0

#define USR_MODE_L1L1 1

/**
 * A loaded super-resolution network.
 */
typedef struct UsrModel UsrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a
 * NUL-terminated string, truncating to `len - 1` bytes. Returns the full
 * message length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `len` writes.
 */
size_t usr_last_error(char *buf, size_t len);

/**
 * Soft thresholding `sign(u) max(|u| - gamma, 0)`.
 *
 * # Safety
 * `out` must be valid for one write.
 */
int32_t usr_soft_threshold(double u, double gamma, double *out);

/**
 * The side-information proximal operator.
 *
 * # Safety
 * `out` must be valid for one write.
 */
int32_t usr_lesita_prox(double u, double side, double mu, double *out);

/**
 * Proximal gradient solve from a zero start. `dict` is row-major
 * `n_y x n_alpha`; `side` (length `n_alpha`) is read only in
 * `USR_MODE_L1L1`. Writes `n_alpha` values to `solution` and the iteration
 * count to `iterations` (which may be null).
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
int32_t usr_solve(int32_t mode,
                  const double *dict,
                  size_t n_y,
                  size_t n_alpha,
                  const double *y,
                  const double *side,
                  double lambda,
                  size_t max_iters,
                  double tol,
                  double *solution,
                  size_t *iterations);

/**
 * PSNR in dB of two `len`-pixel images; infinite for identical inputs.
 *
 * # Safety
 * `a` and `b` must be valid for `len` reads and `out` for one write.
 */
int32_t usr_psnr(const double *a, const double *b, size_t len, double peak, double *out);

/**
 * Loads a checkpoint file. On success `*out` owns a model that must be
 * released with [`usr_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for one write.
 */
int32_t usr_model_load(const char *path, struct UsrModel **out);

/**
 * Loads a checkpoint from `len` bytes in memory.
 *
 * # Safety
 * `bytes` must be valid for `len` reads and `out` for one write.
 */
int32_t usr_model_load_bytes(const uint8_t *bytes, size_t len, struct UsrModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from a load function and not be used afterwards.
 */
void usr_model_free(struct UsrModel *model);

/**
 * Upscaling factor the model was trained for, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live model.
 */
uint32_t usr_model_scale(const struct UsrModel *model);

/**
 * Super-resolves a `width x height` low-resolution image with an
 * interleaved RGB guide of `scale` times its size. Writes
 * `width * scale * height * scale` row-major pixels to `out`, unclamped.
 *
 * # Safety
 * `lr` must hold `width * height` values, `guide_rgb` three values per
 * output pixel and `out` one value per output pixel.
 */
int32_t usr_model_superresolve(const struct UsrModel *model,
                               const double *lr,
                               size_t width,
                               size_t height,
                               const double *guide_rgb,
                               uint32_t scale,
                               double *out);

/**
 * Library version as a static NUL-terminated string.
 */
const char *usr_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UNFOLDSR_H */
