#ifndef LIDAR2D_H
#define LIDAR2D_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum L2dStatus {
  L2D_STATUS_OK = 0,
  L2D_STATUS_NULL_POINTER = 1,
  L2D_STATUS_INVALID_ARGUMENT = 2,
  L2D_STATUS_CONFIG = 3,
  L2D_STATUS_DATA = 4,
  L2D_STATUS_ALIGNMENT = 5,
  L2D_STATUS_EVALUATION = 6,
  L2D_STATUS_DISCONNECTED = 7,
  L2D_STATUS_IO = 8,
  L2D_STATUS_BUFFER_TOO_SMALL = 9,
  L2D_STATUS_PANIC = 10,
} L2dStatus;

typedef enum L2dRmseMode {
  L2D_RMSE_MODE_ERROR_NORM = 0,
  L2D_RMSE_MODE_LITERAL_DIFF = 1,
} L2dRmseMode;

typedef enum L2dMetric {
  L2D_METRIC_PLANAR = 0,
  L2D_METRIC_SPATIAL = 1,
} L2dMetric;

typedef struct L2dHector L2dHector;

typedef struct L2dRbpf L2dRbpf;

typedef struct L2dSubmap L2dSubmap;

typedef struct L2dPose2 {
  double x;
  double y;
  double yaw;
} L2dPose2;

/**
 * One sweep. `ranges` points to `count` values; beams outside
 * `[range_min, range_max]` or non-finite are treated as invalid.
 */
typedef struct L2dScan {
  double timestamp;
  double angle_min;
  double angle_increment;
  double range_min;
  double range_max;
  const double *ranges;
  size_t count;
} L2dScan;

typedef struct L2dPose3 {
  double x;
  double y;
  double z;
  double roll;
  double pitch;
  double yaw;
} L2dPose3;

/**
 * A pose with its timestamp in seconds.
 */
typedef struct L2dStampedPose3 {
  double t;
  struct L2dPose3 pose;
} L2dStampedPose3;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *l2d_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *l2d_version(void);

/**
 * Create a Gauss-Newton scan-matching front end. `start` may be null for
 * the origin.
 *
 * # Safety
 * `start` must be null or valid; `out` must be writable.
 */
enum L2dStatus l2d_hector_new(const struct L2dPose2 *start, struct L2dHector **out);

/**
 * # Safety
 * `handle` must come from [`l2d_hector_new`]; `scan` and `pose` must be valid.
 */
enum L2dStatus l2d_hector_process_scan(struct L2dHector *handle,
                                       const struct L2dScan *scan,
                                       struct L2dPose2 *pose);

/**
 * # Safety
 * `handle` must be null or come from [`l2d_hector_new`], and not be used again.
 */
void l2d_hector_free(struct L2dHector *handle);

/**
 * Create a particle filter front end with default settings and `seed`.
 *
 * # Safety
 * `start` must be null or valid; `out` must be writable.
 */
enum L2dStatus l2d_rbpf_new(uint64_t seed, const struct L2dPose2 *start, struct L2dRbpf **out);

/**
 * # Safety
 * `handle` must come from [`l2d_rbpf_new`]; `scan` and `pose` must be valid.
 */
enum L2dStatus l2d_rbpf_process_scan(struct L2dRbpf *handle,
                                     const struct L2dScan *scan,
                                     struct L2dPose2 *pose);

/**
 * Effective sample size of the current particle weights.
 *
 * # Safety
 * `handle` must come from [`l2d_rbpf_new`]; `n_eff` must be writable.
 */
enum L2dStatus l2d_rbpf_n_eff(const struct L2dRbpf *handle, double *n_eff);

/**
 * # Safety
 * `handle` must be null or come from [`l2d_rbpf_new`], and not be used again.
 */
void l2d_rbpf_free(struct L2dRbpf *handle);

/**
 * Create a submap and pose-graph front end with default settings.
 *
 * # Safety
 * `start` must be null or valid; `out` must be writable.
 */
enum L2dStatus l2d_submap_new(const struct L2dPose2 *start, struct L2dSubmap **out);

/**
 * Online pose for `scan`. Fails once the handle has been finalized.
 *
 * # Safety
 * `handle` must come from [`l2d_submap_new`]; `scan` and `pose` must be valid.
 */
enum L2dStatus l2d_submap_process_scan(struct L2dSubmap *handle,
                                       const struct L2dScan *scan,
                                       struct L2dPose2 *pose);

/**
 * Finish the trailing submap and run a last loop-closure pass.
 *
 * # Safety
 * `handle` must come from [`l2d_submap_new`].
 */
enum L2dStatus l2d_submap_finalize(struct L2dSubmap *handle);

/**
 * Copy the optimized trajectory, one pose per processed scan. Call with
 * `capacity` 0 to query the length through `len`.
 *
 * # Safety
 * `handle` must come from [`l2d_submap_new`]; `poses` must hold `capacity`
 * entries; `len` must be writable.
 */
enum L2dStatus l2d_submap_trajectory(const struct L2dSubmap *handle,
                                     struct L2dPose2 *poses,
                                     size_t capacity,
                                     size_t *len);

/**
 * # Safety
 * `handle` must be null or come from [`l2d_submap_new`], and not be used again.
 */
void l2d_submap_free(struct L2dSubmap *handle);

/**
 * Position RMSE in centimeters of `est` against `truth`, both sorted by
 * strictly increasing time.
 *
 * # Safety
 * `truth` and `est` must hold `n_truth` and `n_est` entries; `rmse_cm`
 * must be writable.
 */
enum L2dStatus l2d_rmse(const struct L2dStampedPose3 *truth,
                        size_t n_truth,
                        const struct L2dStampedPose3 *est,
                        size_t n_est,
                        enum L2dRmseMode mode,
                        enum L2dMetric metric,
                        double *rmse_cm);

/**
 * Mean of `n` per-scenario RMSE values.
 *
 * # Safety
 * `values` must hold `n` entries; `mean` must be writable.
 */
enum L2dStatus l2d_aggregate(const double *values, size_t n, double *mean);

/**
 * Vehicle altitudes the default altimeter setup can resolve.
 *
 * # Safety
 * `min` and `max` must be writable.
 */
enum L2dStatus l2d_effective_range(double *min, double *max);

/**
 * Lift one planar pose to 3D from a single altimeter reading and attitude,
 * with the default fusion settings. `saturated` marks a reading pinned at
 * the sensor minimum.
 *
 * # Safety
 * `pose` must be valid; `out` must be writable.
 */
enum L2dStatus l2d_fuse(const struct L2dPose2 *pose,
                        double range,
                        bool saturated,
                        double roll,
                        double pitch,
                        struct L2dPose3 *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LIDAR2D_H */
