use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use flowpose::camera::Intrinsics;
use flowpose::lie::MotionVector;
use flowpose::synth::{self, DepthModel, SceneSpec};
use flowpose_ffi::*;

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = fp_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(fp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn exp_log_roundtrip() {
    let xi = [0.1, -0.2, 0.3, 0.05, -0.4, 0.2];
    let mut m = [0.0; 16];
    let mut back = [0.0; 6];
    unsafe {
        assert_eq!(fp_se3_exp(xi.as_ptr(), m.as_mut_ptr()), FpStatus::Ok);
        assert_eq!(fp_se3_log(m.as_ptr(), back.as_mut_ptr()), FpStatus::Ok);
    }
    assert_eq!(&m[12..], &[0.0, 0.0, 0.0, 1.0]);
    for (a, b) in xi.iter().zip(back) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(fp_last_error_message().is_null());
}

#[test]
fn null_pointers_are_reported() {
    let mut m = [0.0; 16];
    let status = unsafe { fp_se3_exp(ptr::null(), m.as_mut_ptr()) };
    assert_eq!(status, FpStatus::NullPointer);
    assert!(last_error().contains("xi"));
    let status = unsafe { fp_info_build(0.0, 0.0, 0.0, ptr::null_mut()) };
    assert_eq!(status, FpStatus::NullPointer);
    assert_eq!(unsafe { fp_trajectory_len(ptr::null()) }, 0);
    unsafe {
        fp_depth_free(ptr::null_mut());
        fp_flow_free(ptr::null_mut());
        fp_trajectory_free(ptr::null_mut());
    }
}

#[test]
fn invalid_transform_is_rejected() {
    let mut m = [0.0; 16];
    m[0] = 2.0;
    m[5] = 1.0;
    m[10] = 1.0;
    m[15] = 1.0;
    let mut out = [0.0; 6];
    let status = unsafe { fp_se3_log(m.as_ptr(), out.as_mut_ptr()) };
    assert_ne!(status, FpStatus::Ok);
    assert!(!last_error().is_empty());
}

#[test]
fn info_matrix_and_nll() {
    let mut info = FpInfoMatrix::default();
    assert_eq!(
        unsafe { fp_info_build(0.4, 0.3, -0.2, &mut info) },
        FpStatus::Ok
    );
    assert!((info.c_x - 0.4f64.exp()).abs() < 1e-15);
    assert!((info.c_y - (-0.2f64).exp()).abs() < 1e-15);
    assert!((info.c_xy - 0.1f64.exp() * 0.3f64.tanh()).abs() < 1e-15);
    let det = info.c_x * info.c_y - info.c_xy * info.c_xy;
    assert!((info.log_det - det.ln()).abs() < 1e-12);

    let (rx, ry) = (0.7, -1.1);
    let mut nll = 0.0;
    assert_eq!(
        unsafe { fp_flow_nll(rx, ry, 0.4, 0.3, -0.2, &mut nll) },
        FpStatus::Ok
    );
    let quad = info.c_x * rx * rx + 2.0 * info.c_xy * rx * ry + info.c_y * ry * ry;
    assert!((nll - 0.5 * (quad - det.ln())).abs() < 1e-12);
}

#[test]
fn depth_and_flow_handles() {
    let data = [1.0, 2.0, f64::NAN, 4.0, 5.0, 6.0];
    let mut depth = ptr::null_mut();
    assert_eq!(
        unsafe { fp_depth_new(3, 2, data.as_ptr(), &mut depth) },
        FpStatus::Ok
    );
    assert!(!depth.is_null());
    unsafe { fp_depth_free(depth) };

    let flow = [0.0; 12];
    let mut field = ptr::null_mut();
    let status = unsafe { fp_flow_new(3, 2, flow.as_ptr(), ptr::null(), ptr::null(), &mut field) };
    assert_eq!(status, FpStatus::Ok);
    unsafe { fp_flow_free(field) };

    let mut field = ptr::null_mut();
    let status = unsafe { fp_flow_new(3, 2, ptr::null(), ptr::null(), ptr::null(), &mut field) };
    assert_eq!(status, FpStatus::NullPointer);
    assert!(field.is_null());
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = cpath(&dir.path().join("absent.engr"));
    let mut depth = ptr::null_mut();
    assert_eq!(
        unsafe { fp_depth_read(path.as_ptr(), &mut depth) },
        FpStatus::Io
    );
    assert!(last_error().contains("absent.engr"));
}

#[test]
fn solve_recovers_synthetic_motion() {
    let dir = tempfile::tempdir().unwrap();
    let k = Intrinsics::new(36.0, 36.0, 19.5, 14.5, 40, 30).unwrap();
    let motion = MotionVector::new([0.02, -0.01, 0.03, 0.01, -0.02, 0.015]);
    let spec = SceneSpec::clean(k, DepthModel::Constant(2.5), motion);
    synth::write_scene(&spec, dir.path()).unwrap();

    let mut intr = FpIntrinsics {
        fx: 0.0,
        fy: 0.0,
        cx: 0.0,
        cy: 0.0,
        width: 0,
        height: 0,
    };
    let mut depth = ptr::null_mut();
    let mut flow = ptr::null_mut();
    unsafe {
        let p = cpath(&dir.path().join(synth::INTRINSICS_FILE));
        assert_eq!(fp_intrinsics_read(p.as_ptr(), &mut intr), FpStatus::Ok);
        let p = cpath(&dir.path().join(synth::DEPTH_FILE));
        assert_eq!(fp_depth_read(p.as_ptr(), &mut depth), FpStatus::Ok);
        let p = cpath(&dir.path().join(synth::FLOW_FILE));
        assert_eq!(fp_flow_read(p.as_ptr(), &mut flow), FpStatus::Ok);
    }
    assert_eq!((intr.width, intr.height), (40, 30));

    let mut result = FpSolveResult::default();
    assert_eq!(
        unsafe { fp_solve(depth, flow, &intr, ptr::null(), &mut result) },
        FpStatus::Ok
    );
    assert!(result.converged);
    for (a, b) in result.xi.iter().zip(motion.to_array()) {
        assert!((a - b).abs() < 1e-6, "{:?}", result.xi);
    }

    let mut cfg = fp_solver_config_default();
    cfg.min_valid_pixels = 1_000_000;
    let status = unsafe { fp_solve(depth, flow, &intr, &cfg, &mut result) };
    assert_eq!(status, FpStatus::InsufficientData);

    let status = unsafe { fp_solve(ptr::null(), flow, &intr, &cfg, &mut result) };
    assert_eq!(status, FpStatus::NullPointer);
    unsafe {
        fp_depth_free(depth);
        fp_flow_free(flow);
    }
}

fn line_trajectory(n: usize, scale: f64) -> *mut FpTrajectory {
    let ts: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
    let mut poses = Vec::new();
    for i in 0..n {
        let t = i as f64;
        poses.extend([scale * t, scale * (0.3 * t).sin(), scale * 0.1 * t * t]);
        let h = 0.05 * t;
        poses.extend([0.0, h.sin(), 0.0, h.cos()]);
    }
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { fp_trajectory_new(n, ts.as_ptr(), poses.as_ptr(), &mut out) },
        FpStatus::Ok
    );
    out
}

#[test]
fn evaluate_scaled_trajectory() {
    let gt = line_trajectory(12, 1.0);
    let est = line_trajectory(12, 0.5);
    assert_eq!(unsafe { fp_trajectory_len(gt) }, 12);
    let mut report = FpEvalReport::default();
    assert_eq!(
        unsafe { fp_evaluate(est, gt, 0.02, 1, &mut report) },
        FpStatus::Ok
    );
    assert_eq!(report.matched_count, 12);
    assert!(report.ate_rmse < 1e-12);
    assert!((report.global_scale - 2.0).abs() < 1e-12);
    assert!(!report.low_rank);

    let mut same = FpEvalReport::default();
    assert_eq!(
        unsafe { fp_evaluate(gt, gt, 0.02, 1, &mut same) },
        FpStatus::Ok
    );
    assert_eq!(
        (same.ate_rmse, same.rpe_trans, same.rpe_rot_deg),
        (0.0, 0.0, 0.0)
    );

    let mut bad = FpEvalReport::default();
    assert_eq!(
        unsafe { fp_evaluate(est, gt, 0.02, 0, &mut bad) },
        FpStatus::InvalidArgument
    );
    unsafe {
        fp_trajectory_free(est);
        fp_trajectory_free(gt);
    }
}

#[test]
fn tum_roundtrip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let path = cpath(&dir.path().join("traj.txt"));
    let traj = line_trajectory(5, 1.0);
    let mut back = ptr::null_mut();
    unsafe {
        assert_eq!(fp_trajectory_write_tum(traj, path.as_ptr()), FpStatus::Ok);
        assert_eq!(
            fp_trajectory_read_tum(path.as_ptr(), &mut back),
            FpStatus::Ok
        );
        assert_eq!(fp_trajectory_len(back), 5);
        let mut report = FpEvalReport::default();
        assert_eq!(fp_evaluate(back, traj, 0.02, 1, &mut report), FpStatus::Ok);
        assert!(report.ate_rmse < 1e-9);
        fp_trajectory_free(traj);
        fp_trajectory_free(back);
    }
}

#[test]
fn non_monotonic_timestamps_rejected() {
    let ts = [0.0, 0.0];
    let poses = [
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
    ];
    let mut out = ptr::null_mut();
    let status = unsafe { fp_trajectory_new(2, ts.as_ptr(), poses.as_ptr(), &mut out) };
    assert_eq!(status, FpStatus::InvalidArgument);
    assert!(out.is_null());
}
