use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flowpose::camera::DepthMap;
use flowpose::flow::FlowField;
use flowpose::info::InfoParams;
use flowpose::io::{read_motion, Raster};
use flowpose::lie::{MotionVector, TransformSE3};
use flowpose::losses::flow_nll_map;
use flowpose::trajectory::{chain, PoseSample, Trajectory};
use nalgebra::{Vector2, Vector3};

fn flowpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowpose"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["synth", "--width", "64", "--height", "48", "--out", s(dir)];
    args.extend_from_slice(extra);
    let o = flowpose(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.to_path_buf()
}

fn solve_args(scene: &Path) -> Vec<String> {
    vec![
        "solve".into(),
        "--depth".into(),
        s(&scene.join("depth.engr")).into(),
        "--flow".into(),
        s(&scene.join("flow.engr")).into(),
        "--intrinsics".into(),
        s(&scene.join("intrinsics.txt")).into(),
    ]
}

fn run_owned(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    flowpose(&refs)
}

fn parse_xi(line: &str) -> MotionVector {
    let v: Vec<f64> = line
        .split_whitespace()
        .take(6)
        .map(|t| t.parse().unwrap())
        .collect();
    MotionVector::new(v.try_into().unwrap())
}

#[test]
fn synth_missing_out_is_usage_error() {
    let o = flowpose(&["synth", "--width", "64", "--height", "48"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--out"));
}

#[test]
fn synth_writes_identical_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "--depth",
        "plane:0,0.2,1,2",
        "--texture",
        "checker:8",
        "--motion",
        "0.05,0,0,0,0,0",
        "--outlier-fraction",
        "0.1",
        "--outlier-magnitude",
        "10",
        "--noise-sigma",
        "0.3",
        "--seed",
        "99",
    ];
    let a = synth(&tmp.path().join("a"), &args);
    let b = synth(&tmp.path().join("b"), &args);
    let ma = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    let mb = std::fs::read_to_string(b.join("manifest.txt")).unwrap();
    assert_eq!(ma, mb);
    let names: Vec<&str> = ma.lines().map(|l| l.split(' ').next().unwrap()).collect();
    assert_eq!(
        names,
        [
            "depth.engr",
            "flow.engr",
            "images.engr",
            "intrinsics.txt",
            "motion.txt"
        ]
    );
}

#[test]
fn solve_recovers_ground_truth_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = synth(
        tmp.path(),
        &[
            "--depth",
            "smooth:5,0.7",
            "--motion",
            "0.03,-0.02,0.04,-0.03,0.02,0.05",
        ],
    );
    let first = run_owned(&solve_args(&scene));
    assert!(first.status.success(), "{}", stderr(&first));
    let second = run_owned(&solve_args(&scene));
    assert_eq!(first.stdout, second.stdout);

    let gt = read_motion(&scene.join("motion.txt")).unwrap();
    let xi = parse_xi(&stdout(&first));
    assert!((xi - gt).norm() < 1e-8, "{}", (xi - gt).norm());
    assert_eq!(stdout(&first).split_whitespace().nth(7), Some("true"));
}

#[test]
fn confidence_beats_no_confidence_on_outliers() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = synth(
        tmp.path(),
        &[
            "--depth",
            "smooth:1,0.5",
            "--motion",
            "0.04,0.01,-0.02,0.02,0.03,-0.01",
            "--outlier-fraction",
            "0.2",
            "--outlier-magnitude",
            "50",
            "--seed",
            "4",
        ],
    );
    let gt = read_motion(&scene.join("motion.txt")).unwrap();
    let with = run_owned(&solve_args(&scene));
    let mut args = solve_args(&scene);
    args.push("--no-confidence".into());
    let without = run_owned(&args);
    let e_with = (parse_xi(&stdout(&with)) - gt).norm();
    let e_without = (parse_xi(&stdout(&without)) - gt).norm();
    assert!(e_with < e_without, "{e_with} vs {e_without}");
}

#[test]
fn solve_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = synth(&tmp.path().join("scene"), &["--motion", "0.01,0,0,0,0,0"]);

    let bad = tmp.path().join("bad.engr");
    let mut bytes = std::fs::read(scene.join("flow.engr")).unwrap();
    bytes[0] = b'X';
    std::fs::write(&bad, bytes).unwrap();
    let mut args = solve_args(&scene);
    args[4] = s(&bad).into();
    let o = run_owned(&args);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("magic"));

    let mut args = solve_args(&scene);
    args[2] = s(&tmp.path().join("missing.engr")).into();
    assert_eq!(run_owned(&args).status.code(), Some(3));

    let mut args = solve_args(&scene);
    args.extend(["--min-valid-pixels".into(), "100000".into()]);
    assert_eq!(run_owned(&args).status.code(), Some(5));

    // Depth only on one image column: the pose is not observable.
    let column = DepthMap::from_fn(64, 48, |x, _| if x == 20 { 2.0 } else { f64::NAN }).unwrap();
    let depth_path = tmp.path().join("column.engr");
    Raster::from_depth(&column).write(&depth_path).unwrap();
    let mut args = solve_args(&scene);
    args[2] = s(&depth_path).into();
    args.extend(["--min-valid-pixels".into(), "16".into()]);
    let o = run_owned(&args);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn solve_config_file_and_residuals() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = synth(&tmp.path().join("scene"), &["--motion", "0,0,0,0.02,0,0"]);
    let residuals = tmp.path().join("res.engr");
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "# solver settings\nmax_iterations = 1\ndepth = {}\nflow = {}\nintrinsics = {}\nresiduals = {}\n",
            s(&scene.join("depth.engr")),
            s(&scene.join("flow.engr")),
            s(&scene.join("intrinsics.txt")),
            s(&residuals)
        ),
    )
    .unwrap();
    let o = flowpose(&["solve", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).split_whitespace().nth(6), Some("1"));
    let r = Raster::read(&residuals).unwrap();
    assert_eq!((r.width(), r.height(), r.channels()), (64, 48, 2));

    // Flags override the file.
    let o = flowpose(&["solve", "--config", s(&cfg), "--max-iterations", "20"]);
    assert_eq!(stdout(&o).split_whitespace().nth(7), Some("true"));

    let pretty = flowpose(&["solve", "--config", s(&cfg), "--pretty"]);
    assert!(stdout(&pretty).contains("iterations"));

    std::fs::write(&cfg, "colour = blue\n").unwrap();
    assert_eq!(
        flowpose(&["solve", "--config", s(&cfg)]).status.code(),
        Some(2)
    );
}

fn wander() -> Trajectory {
    let rel: Vec<(f64, MotionVector)> = (1..40)
        .map(|k| {
            let f = k as f64;
            (
                f * 0.1,
                MotionVector::new([
                    0.05 * (0.3 * f).sin(),
                    0.02,
                    -0.2,
                    0.01,
                    0.03 * (0.2 * f).cos(),
                    0.005,
                ]),
            )
        })
        .collect();
    chain(0.0, &rel).unwrap()
}

fn eval_line(est: &Path, gt: &Path, extra: &[&str]) -> (Vec<f64>, usize, Vec<f64>) {
    let mut args = vec!["eval-traj", "--est", s(est), "--gt", s(gt)];
    args.extend_from_slice(extra);
    let o = flowpose(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    let first: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
    assert_eq!(first[3], "matched");
    let metrics = first[..3].iter().map(|v| v.parse().unwrap()).collect();
    let scales = lines
        .next()
        .unwrap()
        .split_whitespace()
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    (metrics, first[4].parse().unwrap(), scales)
}

#[test]
fn eval_traj_identity_and_scaling() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = wander();
    let gt_path = tmp.path().join("gt.txt");
    gt.write_tum(&gt_path).unwrap();
    let (m, n, scales) = eval_line(&gt_path, &gt_path, &[]);
    assert_eq!(m, [0.0, 0.0, 0.0]);
    assert_eq!(n, 40);
    assert_eq!(scales.len(), 5);

    let half = gt.map_poses(|p| TransformSE3::from_parts(p.rotation(), 0.5 * p.translation()));
    let half_path = tmp.path().join("half.txt");
    half.write_tum(&half_path).unwrap();
    let (m, _, scales) = eval_line(&half_path, &gt_path, &["--rpe-delta", "2"]);
    assert!(m[0] < 1e-9, "{}", m[0]);
    assert!((scales[2] - 2.0).abs() < 1e-9);

    let pretty = flowpose(&[
        "eval-traj",
        "--est",
        s(&half_path),
        "--gt",
        s(&gt_path),
        "--pretty",
    ]);
    assert!(stdout(&pretty).contains("ATE (m)"));
}

#[test]
fn eval_traj_matches_direct_definitions() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = wander();
    // Perturb three poses; positions stay non-collinear.
    let est = Trajectory::new(
        gt.samples()
            .iter()
            .enumerate()
            .map(|(i, smp)| {
                let bump = match i {
                    5 => Vector3::new(0.1, 0.0, 0.0),
                    17 => Vector3::new(0.0, -0.05, 0.02),
                    30 => Vector3::new(0.0, 0.0, 0.07),
                    _ => Vector3::zeros(),
                };
                PoseSample {
                    timestamp: smp.timestamp,
                    pose: TransformSE3::from_translation(bump) * smp.pose,
                }
            })
            .collect(),
    )
    .unwrap();
    let (gt_path, est_path) = (tmp.path().join("gt.txt"), tmp.path().join("est.txt"));
    gt.write_tum(&gt_path).unwrap();
    est.write_tum(&est_path).unwrap();
    let (m, n, _) = eval_line(&est_path, &gt_path, &[]);
    assert_eq!(n, 40);

    // Reload what the binary saw and compute the metrics from scratch.
    let gt = Trajectory::read_tum(&gt_path).unwrap();
    let est = Trajectory::read_tum(&est_path).unwrap();
    let (sim_r, sim_t, sim_s) = umeyama(&est, &gt);
    let aligned: Vec<nalgebra::Matrix4<f64>> = est
        .samples()
        .iter()
        .map(|p| {
            let mut m = nalgebra::Matrix4::identity();
            m.fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&(sim_r * p.pose.rotation()));
            m.fixed_view_mut::<3, 1>(0, 3)
                .copy_from(&(sim_s * sim_r * p.pose.translation() + sim_t));
            m
        })
        .collect();
    let gt_m: Vec<nalgebra::Matrix4<f64>> = gt.samples().iter().map(|p| *p.pose.matrix()).collect();
    let ate = (aligned
        .iter()
        .zip(&gt_m)
        .map(|(a, g)| (a.fixed_view::<3, 1>(0, 3) - g.fixed_view::<3, 1>(0, 3)).norm_squared())
        .sum::<f64>()
        / 40.0)
        .sqrt();
    let (mut st, mut sr) = (0.0, 0.0);
    for i in 0..39 {
        let rel_g = gt_m[i].try_inverse().unwrap() * gt_m[i + 1];
        let rel_e = aligned[i].try_inverse().unwrap() * aligned[i + 1];
        let e = rel_g.try_inverse().unwrap() * rel_e;
        st += e.fixed_view::<3, 1>(0, 3).norm_squared();
        let c = ((e[(0, 0)] + e[(1, 1)] + e[(2, 2)] - 1.0) / 2.0).clamp(-1.0, 1.0);
        sr += c.acos().to_degrees().powi(2);
    }
    let rpe_t = (st / 39.0).sqrt();
    let rpe_r = (sr / 39.0).sqrt();
    assert!((m[0] - ate).abs() < 1e-9, "{} {}", m[0], ate);
    assert!((m[1] - rpe_t).abs() < 1e-9, "{} {}", m[1], rpe_t);
    assert!((m[2] - rpe_r).abs() < 1e-6, "{} {}", m[2], rpe_r);
}

/// Textbook similarity alignment of positions, gt ~ s R est + t.
fn umeyama(est: &Trajectory, gt: &Trajectory) -> (nalgebra::Matrix3<f64>, Vector3<f64>, f64) {
    let n = est.len() as f64;
    let p: Vec<Vector3<f64>> = (0..est.len()).map(|i| est.position(i)).collect();
    let q: Vec<Vector3<f64>> = (0..gt.len()).map(|i| gt.position(i)).collect();
    let mp = p.iter().sum::<Vector3<f64>>() / n;
    let mq = q.iter().sum::<Vector3<f64>>() / n;
    let mut cov = nalgebra::Matrix3::zeros();
    for (a, b) in p.iter().zip(&q) {
        cov += (b - mq) * (a - mp).transpose();
    }
    cov /= n;
    let var = p.iter().map(|a| (a - mp).norm_squared()).sum::<f64>() / n;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = nalgebra::Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    let sc = (svd.singular_values.component_mul(&d.diagonal())).sum() / var;
    (r, mq - sc * r * mp, sc)
}

#[test]
fn eval_traj_insufficient_matches() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = wander();
    let late = Trajectory::new(
        gt.samples()
            .iter()
            .map(|p| PoseSample {
                timestamp: p.timestamp + 50.0,
                pose: p.pose,
            })
            .collect(),
    )
    .unwrap();
    let (a, b) = (tmp.path().join("a.txt"), tmp.path().join("b.txt"));
    gt.write_tum(&a).unwrap();
    late.write_tum(&b).unwrap();
    let o = flowpose(&["eval-traj", "--est", s(&a), "--gt", s(&b)]);
    assert_eq!(o.status.code(), Some(5));
}

fn loss(args: &[&str]) -> f64 {
    let o = flowpose(args);
    assert!(o.status.success(), "{}", stderr(&o));
    stdout(&o).trim().parse().unwrap()
}

#[test]
fn loss_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d.engr");
    Raster::from_depth(&DepthMap::from_fn(16, 12, |x, y| 1.0 + 0.1 * (x + y) as f64).unwrap())
        .write(&d)
        .unwrap();
    assert_eq!(
        loss(&["loss", "berhu", "--pred", s(&d), "--gt", s(&d)]),
        0.0
    );

    let c = tmp.path().join("c.engr");
    Raster::from_depth(&DepthMap::constant(16, 12, 2.0).unwrap())
        .write(&c)
        .unwrap();
    assert_eq!(loss(&["loss", "smoothness", "--depth", s(&c)]), 0.0);

    let wrong = tmp.path().join("wrong.engr");
    Raster::from_depth(&DepthMap::constant(8, 12, 2.0).unwrap())
        .write(&wrong)
        .unwrap();
    assert_eq!(
        flowpose(&["loss", "berhu", "--pred", s(&d), "--gt", s(&wrong)])
            .status
            .code(),
        Some(2)
    );

    let o = flowpose(&["loss", "smoothness", "--depth", s(&c)]);
    let text = stdout(&o);
    let mantissa = text.trim().split('e').next().unwrap();
    assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 12);
}

#[test]
fn loss_flownll_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let mut pred = FlowField::zeros(8, 6);
    let gt = FlowField::zeros(8, 6);
    for i in 0..pred.len() {
        let t = i as f64;
        pred.set_flow(i, Vector2::new(0.1 * t.sin(), -0.05 * t));
        pred.set_info(
            i,
            InfoParams::new(0.3 * t.cos(), 0.2 * (0.7 * t).sin(), -0.1 * t / 48.0),
        );
    }
    pred.invalidate(7);
    let (pp, gp) = (tmp.path().join("pred.engr"), tmp.path().join("gt.engr"));
    Raster::from_flow(&pred).write(&pp).unwrap();
    Raster::from_flow(&gt).write(&gp).unwrap();
    let expected = flow_nll_map(
        &Raster::read(&pp).unwrap().to_flow().unwrap(),
        &Raster::read(&gp).unwrap().to_flow().unwrap(),
    )
    .unwrap();
    let got = loss(&["loss", "flownll", "--pred", s(&pp), "--gt", s(&gp)]);
    assert!((got - expected).abs() <= 1e-11 * expected.abs().max(1.0));
}

#[test]
fn loss_pose_terms_on_synthetic_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = synth(
        tmp.path(),
        &[
            "--depth",
            "smooth:2,0.5",
            "--motion",
            "0.02,0.01,-0.01,0.01,0.0,0.02",
        ],
    );
    let photo = loss(&[
        "loss",
        "posephoto",
        "--images",
        s(&scene.join("images.engr")),
        "--depth",
        s(&scene.join("depth.engr")),
        "--intrinsics",
        s(&scene.join("intrinsics.txt")),
        "--xi",
        "0.02,0.01,-0.01,0.01,0.0,0.02",
    ]);
    assert!(photo < 1e-6, "{photo}");

    let pose = loss(&[
        "loss",
        "pose",
        "--xi",
        "0.02,0.01,-0.01,0.01,0.0,0.02",
        "--gt-motion",
        s(&scene.join("motion.txt")),
    ]);
    assert!(pose < 1e-12);
}
