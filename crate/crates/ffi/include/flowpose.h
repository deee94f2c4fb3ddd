#ifndef FLOWPOSE_H
#define FLOWPOSE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes; the non-zero values match the command-line exit codes.
typedef enum FpStatus {
  FP_STATUS_OK = 0,
  FP_STATUS_INVALID_ARGUMENT = 2,
  FP_STATUS_IO = 3,
  FP_STATUS_NUMERICAL = 4,
  FP_STATUS_INSUFFICIENT_DATA = 5,
  FP_STATUS_NULL_POINTER = 6,
  FP_STATUS_PANIC = 7,
} FpStatus;

// Opaque depth map.
typedef struct FpDepthMap FpDepthMap;

// Opaque flow field with per-pixel information parameters.
typedef struct FpFlowField FpFlowField;

// Opaque world-from-camera trajectory.
typedef struct FpTrajectory FpTrajectory;

// Pinhole intrinsics in pixels.
typedef struct FpIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} FpIntrinsics;

// Solver settings; obtain defaults from [`fp_solver_config_default`].
typedef struct FpSolverConfig {
  uint32_t max_iterations;
  double convergence_tol;
  uint32_t min_valid_pixels;
  bool use_confidence;
  bool single_iteration;
  double damping;
  double seed_xi[6];
  bool full_block_weight;
} FpSolverConfig;

typedef struct FpSolveResult {
  // `(vx, vy, vz, wx, wy, wz)`.
  double xi[6];
  uint32_t iterations;
  bool converged;
  double final_cost;
} FpSolveResult;

// Symmetric 2x2 information matrix `[[c_x, c_xy], [c_xy, c_y]]`.
typedef struct FpInfoMatrix {
  double c_x;
  double c_y;
  double c_xy;
  double log_det;
} FpInfoMatrix;

// Trajectory metrics. Scale quantiles are NaN when no per-pose scale
// could be formed (`scale_count == 0`).
typedef struct FpEvalReport {
  double ate_rmse;
  double rpe_trans;
  double rpe_rot_deg;
  uint32_t matched_count;
  double global_scale;
  uint32_t scale_count;
  // min, q1, median, q3, max of the per-pose scales.
  double scale_quantiles[5];
  bool low_rank;
} FpEvalReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call into this library on the same thread.
const char *fp_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *fp_version(void);

// Reads a `fx fy cx cy width height` text file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum FpStatus fp_intrinsics_read(const char *path, struct FpIntrinsics *out);

// Builds a depth map from `width * height` row-major values; non-finite
// or non-positive entries are invalid pixels.
//
// # Safety
// `data` must point to `width * height` doubles and `out` must be valid.
enum FpStatus fp_depth_new(size_t width,
                           size_t height,
                           const double *data,
                           struct FpDepthMap **out);

// Reads a one-channel ENGR raster.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum FpStatus fp_depth_read(const char *path, struct FpDepthMap **out);

// # Safety
// `depth` must be null or a handle from this library not yet freed.
void fp_depth_free(struct FpDepthMap *depth);

// Builds a flow field. `flow` holds `2 * n` pixel displacements, `info`
// `3 * n` values (alpha, beta, gamma) or null for zeros, and `valid` `n`
// flags or null for all valid, where `n = width * height`.
//
// # Safety
// Non-null arrays must have the stated lengths; `out` must be valid.
enum FpStatus fp_flow_new(size_t width,
                          size_t height,
                          const double *flow,
                          const double *info,
                          const uint8_t *valid,
                          struct FpFlowField **out);

// Reads a five-channel ENGR raster (flow x, flow y, alpha, beta, gamma).
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum FpStatus fp_flow_read(const char *path, struct FpFlowField **out);

// # Safety
// `flow` must be null or a handle from this library not yet freed.
void fp_flow_free(struct FpFlowField *flow);

struct FpSolverConfig fp_solver_config_default(void);

// Estimates the motion mapping the depth map's frame into the flow target.
// `config` may be null for defaults.
//
// # Safety
// Handles must be live; `intrinsics` and `out` must be valid pointers.
enum FpStatus fp_solve(const struct FpDepthMap *depth,
                       const struct FpFlowField *flow,
                       const struct FpIntrinsics *intrinsics,
                       const struct FpSolverConfig *config,
                       struct FpSolveResult *out);

// `out = exp(xi)` as a row-major 4x4 matrix.
//
// # Safety
// `xi` must point to 6 doubles and `out` to 16.
enum FpStatus fp_se3_exp(const double *xi, double *out);

// `out = log(T)` for a row-major 4x4 rigid transform.
//
// # Safety
// `matrix` must point to 16 doubles and `out` to 6.
enum FpStatus fp_se3_log(const double *matrix, double *out);

// # Safety
// `out` must be a valid pointer.
enum FpStatus fp_info_build(double alpha_hat,
                            double beta_hat,
                            double gamma_hat,
                            struct FpInfoMatrix *out);

// Negative log-likelihood of the flow residual `(rx, ry)` under the
// information parameters.
//
// # Safety
// `out` must be a valid pointer.
enum FpStatus fp_flow_nll(double rx,
                          double ry,
                          double alpha_hat,
                          double beta_hat,
                          double gamma_hat,
                          double *out);

// Builds a trajectory from `count` timestamps and `7 * count` pose values
// laid out as `tx ty tz qx qy qz qw`.
//
// # Safety
// Arrays must have the stated lengths; `out` must be valid.
enum FpStatus fp_trajectory_new(size_t count,
                                const double *timestamps,
                                const double *poses,
                                struct FpTrajectory **out);

// Reads a TUM trajectory file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum FpStatus fp_trajectory_read_tum(const char *path, struct FpTrajectory **out);

// Writes a TUM trajectory file.
//
// # Safety
// `trajectory` must be live and `path` a NUL-terminated string.
enum FpStatus fp_trajectory_write_tum(const struct FpTrajectory *trajectory, const char *path);

// Number of poses, or 0 for a null handle.
//
// # Safety
// `trajectory` must be null or live.
size_t fp_trajectory_len(const struct FpTrajectory *trajectory);

// # Safety
// `trajectory` must be null or a handle from this library not yet freed.
void fp_trajectory_free(struct FpTrajectory *trajectory);

// Associates, aligns and scores `est` against `gt`.
//
// # Safety
// Handles must be live and `out` valid.
enum FpStatus fp_evaluate(const struct FpTrajectory *est,
                          const struct FpTrajectory *gt,
                          double max_dt,
                          uint32_t rpe_delta,
                          struct FpEvalReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOWPOSE_H */
