/* C interface for the fire SDF/DDF field library. */

#pragma once

/* Generated with cbindgen:0.27.0 */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes for every fallible call.
 */
typedef enum FireStatus {
  FIRE_STATUS_OK = 0,
  FIRE_STATUS_INVALID_ARGUMENT = 1,
  FIRE_STATUS_IO_ERROR = 2,
  FIRE_STATUS_NUMERIC_ERROR = 3,
  FIRE_STATUS_INTERNAL_ERROR = 4,
} FireStatus;

/**
 * Opaque trained-model handle.
 */
typedef struct FireCheckpoint FireCheckpoint;

/**
 * Pinhole camera description for the rendering entry points.
 */
typedef struct FireCameraDesc {
  double position[3];
  double target[3];
  double up[3];
  double fov_y_deg;
  uint32_t width;
  uint32_t height;
} FireCameraDesc;

/**
 * Copies the calling thread's last error message (NUL-terminated) into
 * `buf`; returns the full message length including the terminator.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes (or be null when `cap` is 0).
 */
uintptr_t fire_last_error(char *buf, uintptr_t cap);

/**
 * Static version string, NUL-terminated.
 */
const char *fire_version(void);

/**
 * Loads a FIRC checkpoint; on success stores the handle in `out`.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
 */
enum FireStatus fire_checkpoint_load(const char *path, struct FireCheckpoint **out);

/**
 * Releases a handle returned by [`fire_checkpoint_load`].
 *
 * # Safety
 * `ckpt` must be null or a pointer from `fire_checkpoint_load`, not yet
 * freed.
 */
void fire_checkpoint_free(struct FireCheckpoint *ckpt);

/**
 * Number of training shapes (latent codes) in the checkpoint.
 *
 * # Safety
 * `ckpt` must be a live handle.
 */
uintptr_t fire_checkpoint_shape_count(const struct FireCheckpoint *ckpt);

/**
 * Latent dimensionality of the model.
 *
 * # Safety
 * `ckpt` must be a live handle.
 */
uintptr_t fire_checkpoint_latent_dim(const struct FireCheckpoint *ckpt);

/**
 * Copies the trained latent code of a shape into `out` (length `len` must
 * equal the latent dimension).
 *
 * # Safety
 * `ckpt` must be a live handle and `out` must hold `len` doubles.
 */
enum FireStatus fire_checkpoint_latent(const struct FireCheckpoint *ckpt,
                                       uintptr_t shape_index,
                                       double *out,
                                       uintptr_t len);

/**
 * Evaluates the truncated SDF at `n_points` packed xyz points.
 *
 * # Safety
 * Buffers must match the documented lengths: `z` has `z_len` doubles,
 * `points_xyz` has `3 * n_points`, `out_sdf` has `n_points`.
 */
enum FireStatus fire_sdf_eval(const struct FireCheckpoint *ckpt,
                              const double *z,
                              uintptr_t z_len,
                              const double *points_xyz,
                              uintptr_t n_points,
                              double *out_sdf);

/**
 * Evaluates the DDF for `n_rays` packed (p, r) pairs; writes distances
 * and hit probabilities.
 *
 * # Safety
 * `p_xyz`/`r_xyz` hold `3 * n_rays` doubles; `out_d`/`out_sigma` hold
 * `n_rays` each.
 */
enum FireStatus fire_ddf_eval(const struct FireCheckpoint *ckpt,
                              const double *z,
                              uintptr_t z_len,
                              const double *p_xyz,
                              const double *r_xyz,
                              uintptr_t n_rays,
                              double *out_d,
                              double *out_sigma);

/**
 * Renders a depth map with one DDF evaluation per sphere-hit pixel.
 * `out_depth` and `out_mask` hold width*height entries; masked-out pixels
 * carry depth 0.
 *
 * # Safety
 * Buffer lengths must match the camera resolution.
 */
enum FireStatus fire_render_depth(const struct FireCheckpoint *ckpt,
                                  const double *z,
                                  uintptr_t z_len,
                                  const struct FireCameraDesc *camera,
                                  double sigma_threshold,
                                  uint32_t threads,
                                  double *out_depth,
                                  uint8_t *out_mask);

/**
 * Optimizes a latent code from a posed depth map (FIRe loop). `depth` and
 * `mask` are width*height buffers; `out_z` receives the optimized code.
 *
 * # Safety
 * Buffer lengths must match the camera resolution and the model latent
 * dimension.
 */
enum FireStatus fire_reconstruct_depth(const struct FireCheckpoint *ckpt,
                                       const struct FireCameraDesc *camera,
                                       const double *depth,
                                       const uint8_t *mask,
                                       uint32_t iterations,
                                       double *out_z,
                                       uintptr_t z_len);

/**
 * Symmetric L2 chamfer distance between two packed xyz point sets.
 *
 * # Safety
 * `a_xyz` holds `3 * n_a` doubles, `b_xyz` holds `3 * n_b`, and `out` is
 * a valid pointer.
 */
enum FireStatus fire_chamfer(const double *a_xyz,
                             uintptr_t n_a,
                             const double *b_xyz,
                             uintptr_t n_b,
                             double *out);
