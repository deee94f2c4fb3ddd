//! C ABI for flowpose.
//!
//! Every fallible function returns an [`FpStatus`]; on failure a message is
//! available from [`fp_last_error_message`] on the same thread. Objects are
//! opaque handles created by `*_new` / `*_read` functions and released with
//! the matching `*_free`. Matrices are row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use flowpose::camera::{DepthMap, Intrinsics};
use flowpose::flow::FlowField;
use flowpose::info::{flow_nll, InfoMatrix, InfoParams};
use flowpose::io::{read_intrinsics, Raster};
use flowpose::lie::{MotionVector, TransformSE3};
use flowpose::solver::{solve, SolverConfig};
use flowpose::trajectory::{evaluate, EvalOptions, PoseSample, Trajectory};
use flowpose::Error;
use nalgebra::{Matrix4, Quaternion, UnitQuaternion, Vector2, Vector3};

/// Status codes; the non-zero values match the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FpStatus {
    Ok = 0,
    InvalidArgument = 2,
    Io = 3,
    Numerical = 4,
    InsufficientData = 5,
    NullPointer = 6,
    Panic = 7,
}

impl From<&Error> for FpStatus {
    fn from(e: &Error) -> Self {
        match e.exit_code() {
            2 => FpStatus::InvalidArgument,
            3 => FpStatus::Io,
            4 => FpStatus::Numerical,
            5 => FpStatus::InsufficientData,
            _ => FpStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

struct Failure(FpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(FpStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FpStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            FpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FpStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Failure(FpStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn boxed<T>(value: T, out: &mut *mut T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Pinhole intrinsics in pixels.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FpIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl FpIntrinsics {
    fn to_core(self) -> Result<Intrinsics, Failure> {
        Ok(Intrinsics::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width as usize,
            self.height as usize,
        )?)
    }
}

/// Reads a `fx fy cx cy width height` text file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fp_intrinsics_read(
    path: *const c_char,
    out: *mut FpIntrinsics,
) -> FpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let k = read_intrinsics(&path_arg(path)?)?;
        *out = FpIntrinsics {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width as u32,
            height: k.height as u32,
        };
        Ok(())
    })
}

/// Opaque depth map.
pub struct FpDepthMap(DepthMap);

/// Builds a depth map from `width * height` row-major values; non-finite
/// or non-positive entries are invalid pixels.
///
/// # Safety
/// `data` must point to `width * height` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fp_depth_new(
    width: usize,
    height: usize,
    data: *const f64,
    out: *mut *mut FpDepthMap,
) -> FpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let values = slice_arg(data, width * height, "data")?.to_vec();
        boxed(FpDepthMap(DepthMap::new(width, height, values)?), out);
        Ok(())
    })
}

/// Reads a one-channel ENGR raster.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fp_depth_read(path: *const c_char, out: *mut *mut FpDepthMap) -> FpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        boxed(FpDepthMap(Raster::read(&path_arg(path)?)?.to_depth()?), out);
        Ok(())
    })
}

/// # Safety
/// `depth` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fp_depth_free(depth: *mut FpDepthMap) {
    if !depth.is_null() {
        drop(Box::from_raw(depth));
    }
}

/// Opaque flow field with per-pixel information parameters.
pub struct FpFlowField(FlowField);

/// Builds a flow field. `flow` holds `2 * n` pixel displacements, `info`
/// `3 * n` values (alpha, beta, gamma) or null for zeros, and `valid` `n`
/// flags or null for all valid, where `n = width * height`.
///
/// # Safety
/// Non-null arrays must have the stated lengths; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fp_flow_new(
    width: usize,
    height: usize,
    flow: *const f64,
    info: *const f64,
    valid: *const u8,
    out: *mut *mut FpFlowField,
) -> FpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let n = width * height;
        let f = slice_arg(flow, 2 * n, "flow")?;
        let flows = f
            .chunks_exact(2)
            .map(|c| Vector2::new(c[0], c[1]))
            .collect();
        let infos = if info.is_null() {
            vec![InfoParams::default(); n]
        } else {
            slice_arg(info, 3 * n, "info")?
                .chunks_exact(3)
                .map(|c| InfoParams::new(c[0], c[1], c[2]))
                .collect()
        };
        let mask = if valid.is_null() {
            vec![true; n]
        } else {
            slice_arg(valid, n, "valid")?
                .iter()
                .map(|v| *v != 0)
                .collect()
        };
        boxed(
            FpFlowField(FlowField::new(width, height, flows, infos, mask)?),
            out,
        );
        Ok(())
    })
}

/// Reads a five-channel ENGR raster (flow x, flow y, alpha, beta, gamma).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fp_flow_read(path: *const c_char, out: *mut *mut FpFlowField) -> FpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        boxed(FpFlowField(Raster::read(&path_arg(path)?)?.to_flow()?), out);
        Ok(())
    })
}

/// # Safety
/// `flow` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fp_flow_free(flow: *mut FpFlowField) {
    if !flow.is_null() {
        drop(Box::from_raw(flow));
    }
}

/// Solver settings; obtain defaults from [`fp_solver_config_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FpSolverConfig {
    pub max_iterations: u32,
    pub convergence_tol: f64,
    pub min_valid_pixels: u32,
    pub use_confidence: bool,
    pub single_iteration: bool,
    pub damping: f64,
    pub seed_xi: [f64; 6],
    pub full_block_weight: bool,
}

impl From<&SolverConfig> for FpSolverConfig {
    fn from(c: &SolverConfig) -> Self {
        Self {
            max_iterations: c.max_iterations as u32,
            convergence_tol: c.convergence_tol,
            min_valid_pixels: c.min_valid_pixels as u32,
            use_confidence: c.use_confidence,
            single_iteration: c.single_iteration,
            damping: c.damping,
            seed_xi: c.seed_xi.to_array(),
            full_block_weight: c.full_block_weight,
        }
    }
}

impl From<&FpSolverConfig> for SolverConfig {
    fn from(c: &FpSolverConfig) -> Self {
        Self {
            max_iterations: c.max_iterations as usize,
            convergence_tol: c.convergence_tol,
            min_valid_pixels: c.min_valid_pixels as usize,
            use_confidence: c.use_confidence,
            single_iteration: c.single_iteration,
            damping: c.damping,
            seed_xi: MotionVector::new(c.seed_xi),
            full_block_weight: c.full_block_weight,
        }
    }
}

#[no_mangle]
pub extern "C" fn fp_solver_config_default() -> FpSolverConfig {
    FpSolverConfig::from(&SolverConfig::default())
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FpSolveResult {
    /// `(vx, vy, vz, wx, wy, wz)`.
    pub xi: [f64; 6],
    pub iterations: u32,
    pub converged: bool,
    pub final_cost: f64,
}

/// Estimates the motion mapping the depth map's frame into the flow target.
/// `config` may be null for defaults.
///
/// # Safety
/// Handles must be live; `intrinsics` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fp_solve(
    depth: *const FpDepthMap,
    flow: *const FpFlowField,
    intrinsics: *const FpIntrinsics,
    config: *const FpSolverConfig,
    out: *mut FpSolveResult,
) -> FpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let depth = &ref_arg(depth, "depth")?.0;
        let flow = &ref_arg(flow, "flow")?.0;
        let k = ref_arg(intrinsics, "intrinsics")?.to_core()?;
        let cfg = config
            .as_ref()
            .map_or_else(SolverConfig::default, SolverConfig::from);
        let r = solve(depth, flow, &k, &cfg)?;
        *out = FpSolveResult {
            xi: r.xi.to_array(),
            iterations: r.iterations as u32,
            converged: r.converged,
            final_cost: r.final_cost,
        };
        Ok(())
    })
}

/// `out = exp(xi)` as a row-major 4x4 matrix.
///
/// # Safety
/// `xi` must point to 6 doubles and `out` to 16.
#[no_mangle]
pub unsafe extern "C" fn fp_se3_exp(xi: *const f64, out: *mut f64) -> FpStatus {
    guard(|| {
        let xi = slice_arg(xi, 6, "xi")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let t = TransformSE3::exp(&MotionVector::new(xi.try_into().expect("length 6")))?;
        let out = std::slice::from_raw_parts_mut(out, 16);
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = t.matrix()[(k / 4, k % 4)];
        }
        Ok(())
    })
}

/// `out = log(T)` for a row-major 4x4 rigid transform.
///
/// # Safety
/// `matrix` must point to 16 doubles and `out` to 6.
#[no_mangle]
pub unsafe extern "C" fn fp_se3_log(matrix: *const f64, out: *mut f64) -> FpStatus {
    guard(|| {
        let m = slice_arg(matrix, 16, "matrix")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let t = TransformSE3::from_matrix(Matrix4::from_row_slice(m))?;
        let xi = t.log()?.to_array();
        std::slice::from_raw_parts_mut(out, 6).copy_from_slice(&xi);
        Ok(())
    })
}

/// Symmetric 2x2 information matrix `[[c_x, c_xy], [c_xy, c_y]]`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FpInfoMatrix {
    pub c_x: f64,
    pub c_y: f64,
    pub c_xy: f64,
    pub log_det: f64,
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fp_info_build(
    alpha_hat: f64,
    beta_hat: f64,
    gamma_hat: f64,
    out: *mut FpInfoMatrix,
) -> FpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = InfoMatrix::build(&InfoParams::new(alpha_hat, beta_hat, gamma_hat))?;
        *out = FpInfoMatrix {
            c_x: m.c_x(),
            c_y: m.c_y(),
            c_xy: m.c_xy(),
            log_det: m.log_det(),
        };
        Ok(())
    })
}

/// Negative log-likelihood of the flow residual `(rx, ry)` under the
/// information parameters.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fp_flow_nll(
    rx: f64,
    ry: f64,
    alpha_hat: f64,
    beta_hat: f64,
    gamma_hat: f64,
    out: *mut f64,
) -> FpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = InfoMatrix::build(&InfoParams::new(alpha_hat, beta_hat, gamma_hat))?;
        *out = flow_nll(&Vector2::new(rx, ry), &m);
        Ok(())
    })
}

/// Opaque world-from-camera trajectory.
pub struct FpTrajectory(Trajectory);

/// Builds a trajectory from `count` timestamps and `7 * count` pose values
/// laid out as `tx ty tz qx qy qz qw`.
///
/// # Safety
/// Arrays must have the stated lengths; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fp_trajectory_new(
    count: usize,
    timestamps: *const f64,
    poses: *const f64,
    out: *mut *mut FpTrajectory,
) -> FpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ts = slice_arg(timestamps, count, "timestamps")?;
        let ps = slice_arg(poses, 7 * count, "poses")?;
        let mut samples = Vec::with_capacity(count);
        for (t, p) in ts.iter().zip(ps.chunks_exact(7)) {
            let q = Quaternion::new(p[6], p[3], p[4], p[5]);
            if !q.norm().is_normal() {
                return Err(Failure(FpStatus::InvalidArgument, "zero quaternion".into()));
            }
            let r = UnitQuaternion::from_quaternion(q)
                .to_rotation_matrix()
                .into_inner();
            samples.push(PoseSample {
                timestamp: *t,
                pose: TransformSE3::from_parts(r, Vector3::new(p[0], p[1], p[2])),
            });
        }
        boxed(FpTrajectory(Trajectory::new(samples)?), out);
        Ok(())
    })
}

/// Reads a TUM trajectory file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fp_trajectory_read_tum(
    path: *const c_char,
    out: *mut *mut FpTrajectory,
) -> FpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        boxed(FpTrajectory(Trajectory::read_tum(&path_arg(path)?)?), out);
        Ok(())
    })
}

/// Writes a TUM trajectory file.
///
/// # Safety
/// `trajectory` must be live and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fp_trajectory_write_tum(
    trajectory: *const FpTrajectory,
    path: *const c_char,
) -> FpStatus {
    guard(|| {
        let t = &ref_arg(trajectory, "trajectory")?.0;
        t.write_tum(&path_arg(path)?)?;
        Ok(())
    })
}

/// Number of poses, or 0 for a null handle.
///
/// # Safety
/// `trajectory` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn fp_trajectory_len(trajectory: *const FpTrajectory) -> usize {
    trajectory.as_ref().map_or(0, |t| t.0.len())
}

/// # Safety
/// `trajectory` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fp_trajectory_free(trajectory: *mut FpTrajectory) {
    if !trajectory.is_null() {
        drop(Box::from_raw(trajectory));
    }
}

/// Trajectory metrics. Scale quantiles are NaN when no per-pose scale
/// could be formed (`scale_count == 0`).
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FpEvalReport {
    pub ate_rmse: f64,
    pub rpe_trans: f64,
    pub rpe_rot_deg: f64,
    pub matched_count: u32,
    pub global_scale: f64,
    pub scale_count: u32,
    /// min, q1, median, q3, max of the per-pose scales.
    pub scale_quantiles: [f64; 5],
    pub low_rank: bool,
}

/// Associates, aligns and scores `est` against `gt`.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fp_evaluate(
    est: *const FpTrajectory,
    gt: *const FpTrajectory,
    max_dt: f64,
    rpe_delta: u32,
    out: *mut FpEvalReport,
) -> FpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let est = &ref_arg(est, "est")?.0;
        let gt = &ref_arg(gt, "gt")?.0;
        let opts = EvalOptions {
            max_dt,
            rpe_delta: rpe_delta as usize,
        };
        let r = evaluate(est, gt, &opts)?;
        *out = FpEvalReport {
            ate_rmse: r.ate_rmse,
            rpe_trans: r.rpe_trans,
            rpe_rot_deg: r.rpe_rot,
            matched_count: r.matched_count as u32,
            global_scale: r.scale,
            scale_count: r.per_pose_scales.len() as u32,
            scale_quantiles: r.scale_quantiles().unwrap_or([f64::NAN; 5]),
            low_rank: r.low_rank,
        };
        Ok(())
    })
}
