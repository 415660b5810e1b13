#ifndef POGMDM_H
#define POGMDM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PogmdmStatus {
  POGMDM_STATUS_OK = 0,
  POGMDM_STATUS_NULL_POINTER = 1,
  POGMDM_STATUS_INVALID_ARGUMENT = 2,
  POGMDM_STATUS_CONFIG = 3,
  POGMDM_STATUS_IO = 4,
  POGMDM_STATUS_ARCHIVE = 5,
  POGMDM_STATUS_IMAGE = 6,
  POGMDM_STATUS_NUMERICAL = 7,
  POGMDM_STATUS_DEGENERATE = 8,
  POGMDM_STATUS_PANIC = 9,
} PogmdmStatus;

typedef enum PogmdmKind {
  POGMDM_KIND_PATCH = 0,
  POGMDM_KIND_WAVELET = 1,
  POGMDM_KIND_SHEARLET = 2,
} PogmdmKind;

/**
 * Opaque model handle.
 */
typedef struct PogmdmModel PogmdmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after success.
 * Valid until the next call on the same thread.
 */
const char *pogmdm_last_error(void);

/**
 * Loads and validates an archive. Free the handle with
 * [`pogmdm_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PogmdmStatus pogmdm_model_load(const char *path, struct PogmdmModel **out);

/**
 * # Safety
 * `model` must come from [`pogmdm_model_load`] and not be used afterwards.
 * Null is ignored.
 */
void pogmdm_model_free(struct PogmdmModel *model);

/**
 * # Safety
 * `model` must be a live handle, `out` writable.
 */
enum PogmdmStatus pogmdm_model_kind(const struct PogmdmModel *model, enum PogmdmKind *out);

/**
 * Number of learnable parameters.
 *
 * # Safety
 * `model` must be a live handle, `out` writable.
 */
enum PogmdmStatus pogmdm_model_n_params(const struct PogmdmModel *model, uintptr_t *out);

/**
 * Whole-image score at diffusion time `t`.
 *
 * # Safety
 * `y` and `out` must hold `width * height` doubles.
 */
enum PogmdmStatus pogmdm_score(const struct PogmdmModel *model,
                               const double *y,
                               uintptr_t width,
                               uintptr_t height,
                               double t,
                               double *out);

/**
 * One-step empirical Bayes denoising for noise level `sigma`. The output
 * is not clamped.
 *
 * # Safety
 * `y` and `out` must hold `width * height` doubles.
 */
enum PogmdmStatus pogmdm_denoise_eb(const struct PogmdmModel *model,
                                    const double *y,
                                    uintptr_t width,
                                    uintptr_t height,
                                    double sigma,
                                    double *out);

/**
 * Annealed stochastic denoising with the default schedule.
 *
 * # Safety
 * `y` and `out` must hold `width * height` doubles.
 */
enum PogmdmStatus pogmdm_denoise_stochastic(const struct PogmdmModel *model,
                                            const double *y,
                                            uintptr_t width,
                                            uintptr_t height,
                                            double sigma,
                                            uint64_t seed,
                                            double *out);

/**
 * Blind denoising with per-patch noise estimates (patch models only).
 * `sigma_map` receives the pixel-averaged estimated `sqrt(2t)`; it may be
 * null.
 *
 * # Safety
 * `y`, `out` and a non-null `sigma_map` must hold `width * height` doubles.
 */
enum PogmdmStatus pogmdm_denoise_blind(const struct PogmdmModel *model,
                                       const double *y,
                                       uintptr_t width,
                                       uintptr_t height,
                                       double *out,
                                       double *sigma_map);

/**
 * PSNR in dB; `+inf` for identical images.
 *
 * # Safety
 * `a` and `b` must hold `width * height` doubles.
 */
enum PogmdmStatus pogmdm_psnr(const double *a,
                              const double *b,
                              uintptr_t width,
                              uintptr_t height,
                              double *out);

/**
 * Mean SSIM over 7x7 windows.
 *
 * # Safety
 * `a` and `b` must hold `width * height` doubles.
 */
enum PogmdmStatus pogmdm_ssim(const double *a,
                              const double *b,
                              uintptr_t width,
                              uintptr_t height,
                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POGMDM_H */
