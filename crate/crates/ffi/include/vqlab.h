#ifndef VQLAB_H
#define VQLAB_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VqStatus {
  VQ_STATUS_OK = 0,
  VQ_STATUS_NULL_POINTER = 1,
  VQ_STATUS_INVALID_ARGUMENT = 2,
  VQ_STATUS_IO = 3,
  VQ_STATUS_FORMAT = 4,
  VQ_STATUS_OUT_OF_RANGE = 5,
  VQ_STATUS_GEOMETRY = 6,
  VQ_STATUS_TOO_SMALL = 7,
  VQ_STATUS_DEGENERATE = 8,
  VQ_STATUS_CONFIG = 9,
  VQ_STATUS_INTERNAL = 10,
  VQ_STATUS_PANIC = 11,
} VqStatus;

/**
 * Values for the `metric` argument of the fidelity functions.
 */
typedef enum VqMetric {
  VQ_METRIC_PSNR = 0,
  VQ_METRIC_SSIM = 1,
  VQ_METRIC_MS_SSIM = 2,
} VqMetric;

/**
 * Values for the `variant` argument of the decay-law functions.
 */
typedef enum VqDecayVariant {
  VQ_DECAY_VARIANT_EXP = 0,
  VQ_DECAY_VARIANT_Q_STAR = 1,
  VQ_DECAY_VARIANT_MA = 2,
} VqDecayVariant;

/**
 * A trained network and the preprocessing it was trained with.
 */
typedef struct VqModel VqModel;

/**
 * An 8-bit 4:2:0 video held in memory.
 */
typedef struct VqVideo VqVideo;

/**
 * Geometry of an open video.
 */
typedef struct VqVideoInfo {
  size_t width;
  size_t height;
  size_t frames;
  uint32_t fps_num;
  uint32_t fps_den;
} VqVideoInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *vq_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into the library on the same thread.
 */
const char *vq_last_error(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum VqStatus vq_video_open(const char *path, struct VqVideo **out);

/**
 * Parses a Y4M stream held in memory.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` be a valid pointer.
 */
enum VqStatus vq_video_from_y4m_bytes(const uint8_t *data, size_t len, struct VqVideo **out);

/**
 * # Safety
 * `video` must come from this library and not be used afterwards. NULL is
 * ignored.
 */
void vq_video_free(struct VqVideo *video);

/**
 * # Safety
 * `video` must be a live handle and `out` a valid pointer.
 */
enum VqStatus vq_video_info(const struct VqVideo *video, struct VqVideoInfo *out);

/**
 * Mean of per-frame luma scores of `distorted` against `reference`.
 *
 * # Safety
 * Both handles must be live and `out` a valid pointer.
 */
enum VqStatus vq_video_fidelity(const struct VqVideo *reference,
                                const struct VqVideo *distorted,
                                int metric,
                                double *out);

/**
 * Score of one pair of `width x height` 8-bit planes.
 *
 * # Safety
 * `reference` and `distorted` must each hold `width * height` bytes.
 */
enum VqStatus vq_plane_fidelity(const uint8_t *reference,
                                const uint8_t *distorted,
                                size_t width,
                                size_t height,
                                int metric,
                                double *out);

/**
 * Spatial and temporal information of a video.
 *
 * # Safety
 * `video` must be a live handle; `si` and `ti` valid pointers.
 */
enum VqStatus vq_video_si_ti(const struct VqVideo *video, double *si, double *ti);

/**
 * Quantization step of a VVC-family Qp.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum VqStatus vq_qp_to_qstep(double qp, double *out);

/**
 * Normalized quality predicted by a decay law. `s_min <= 0` means none,
 * which only the exponential law accepts.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum VqStatus vq_decay_predict(int variant, double param, double s_min, double q_step, double *out);

/**
 * Fits the law parameter to `n` `(q_step, mos)` pairs.
 *
 * # Safety
 * `q_steps` and `mos` must each hold `n` values; `out` must be valid.
 */
enum VqStatus vq_decay_fit(int variant,
                           const double *q_steps,
                           const double *mos,
                           size_t n,
                           double s_min,
                           double *out);

/**
 * # Safety
 * `x` and `y` must each hold `n` values; `out` must be valid.
 */
enum VqStatus vq_plcc(const double *x, const double *y, size_t n, double *out);

/**
 * # Safety
 * `x` and `y` must each hold `n` values; `out` must be valid.
 */
enum VqStatus vq_srcc(const double *x, const double *y, size_t n, double *out);

/**
 * # Safety
 * `x` and `y` must each hold `n` values; `out` must be valid.
 */
enum VqStatus vq_krcc(const double *x, const double *y, size_t n, double *out);

/**
 * # Safety
 * `x` and `y` must each hold `n` values; `out` must be valid.
 */
enum VqStatus vq_rmse(const double *x, const double *y, size_t n, double *out);

/**
 * Loads a checkpoint manifest (`.json`) and its blob.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum VqStatus vq_model_load(const char *path, struct VqModel **out);

/**
 * Quality in `[0, 1]` of a whole video.
 *
 * # Safety
 * Both handles must be live and `out` a valid pointer.
 */
enum VqStatus vq_model_predict(const struct VqModel *model,
                               const struct VqVideo *video,
                               double *out);

/**
 * # Safety
 * `model` must come from [`vq_model_load`] and not be used afterwards.
 * NULL is ignored.
 */
void vq_model_free(struct VqModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VQLAB_H */
