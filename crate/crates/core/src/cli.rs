//! Command-line front end: `synth`, `solve`, `eval-traj` and `loss`.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O or format, 4 numerical
//! degeneracy, 5 insufficient data.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::camera::{DepthMap, ImageRaster, Intrinsics};
use crate::config::{parse_motion_list, RunConfig};
use crate::error::{Error, Result};
use crate::io::{read_intrinsics, read_motion, Raster};
use crate::lie::{MotionVector, TransformSE3};
use crate::losses::{self, LossWeights, StereoSample};
use crate::solver::{compute_residuals, solve};
use crate::synth::{write_scene, DepthModel, SceneSpec, TextureModel};
use crate::trajectory::{evaluate, EvalOptions, Trajectory};

#[derive(Debug, Parser)]
#[command(
    name = "flowpose",
    version,
    about = "Camera pose from dense flow and depth"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic scene directory with a hash manifest.
    Synth(SynthArgs),
    /// Estimate the relative pose from a depth raster and a flow raster.
    Solve(SolveArgs),
    /// Score an estimated TUM trajectory against ground truth.
    EvalTraj(EvalArgs),
    /// Evaluate a single loss on raster inputs.
    Loss(LossArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    /// Focal length in x; defaults to 0.9 * width.
    #[arg(long)]
    fx: Option<f64>,
    /// Focal length in y; defaults to fx.
    #[arg(long)]
    fy: Option<f64>,
    /// Principal point x; defaults to (width - 1) / 2.
    #[arg(long)]
    cx: Option<f64>,
    /// Principal point y; defaults to (height - 1) / 2.
    #[arg(long)]
    cy: Option<f64>,
    /// constant:D | plane:NX,NY,NZ,OFFSET | smooth:SEED,AMPLITUDE
    #[arg(long, default_value = "constant:2.0")]
    depth: String,
    /// checker:PERIOD | smooth:SEED
    #[arg(long, default_value = "smooth:0")]
    texture: String,
    /// vx,vy,vz,wx,wy,wz
    #[arg(long, default_value = "0,0,0,0,0,0", allow_hyphen_values = true)]
    motion: String,
    #[arg(long, default_value_t = 0.0)]
    outlier_fraction: f64,
    /// Pixels.
    #[arg(long, default_value_t = 0.0)]
    outlier_magnitude: f64,
    /// Pixels.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long)]
    flow: Option<PathBuf>,
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    min_valid_pixels: Option<usize>,
    /// Ignore the information parameters (unit confidences).
    #[arg(long)]
    no_confidence: bool,
    /// Stop after one reweighted Gauss-Newton step.
    #[arg(long)]
    single_iteration: bool,
    #[arg(long)]
    damping: Option<f64>,
    /// Initial estimate vx,vy,vz,wx,wy,wz.
    #[arg(long, allow_hyphen_values = true)]
    seed_xi: Option<String>,
    /// Weight with the full 2x2 information block.
    #[arg(long)]
    full_block: bool,
    /// Write the final per-pixel residuals (2 channels) to this raster.
    #[arg(long)]
    residuals: Option<PathBuf>,
    #[arg(long)]
    pretty: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    est: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    rpe_delta: Option<usize>,
    /// Seconds.
    #[arg(long)]
    max_dt: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pretty: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossName {
    Berhu,
    Smoothness,
    Photometric,
    Combined,
    Posephoto,
    Pose,
    Flownll,
}

#[derive(Debug, Args)]
struct LossArgs {
    name: LossName,
    /// Predicted depth (berhu, combined) or predicted flow (flownll).
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Ground-truth depth (berhu, combined) or ground-truth flow (flownll).
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    pred_right: Option<PathBuf>,
    #[arg(long)]
    gt_right: Option<PathBuf>,
    /// Depth map (smoothness, posephoto) or left depth (photometric).
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long)]
    depth_right: Option<PathBuf>,
    #[arg(long)]
    left: Option<PathBuf>,
    #[arg(long)]
    right: Option<PathBuf>,
    /// Two-image raster as written by `synth`.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Metres.
    #[arg(long)]
    baseline: Option<f64>,
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// vx,vy,vz,wx,wy,wz
    #[arg(long, allow_hyphen_values = true)]
    xi: Option<String>,
    /// Ground-truth motion file.
    #[arg(long)]
    gt_motion: Option<PathBuf>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
}

/// Runs the CLI on the process arguments and returns the exit code.
pub fn run() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_from(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_from<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().ansi().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Solve(a) => cmd_solve(a, out),
        Command::EvalTraj(a) => cmd_eval_traj(a, out),
        Command::Loss(a) => cmd_loss(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn required(value: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    value.ok_or_else(|| Error::invalid(format!("missing required input --{flag}")))
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let fx = a.fx.unwrap_or(0.9 * a.width as f64);
    let intrinsics = Intrinsics::new(
        fx,
        a.fy.unwrap_or(fx),
        a.cx.unwrap_or((a.width as f64 - 1.0) / 2.0),
        a.cy.unwrap_or((a.height as f64 - 1.0) / 2.0),
        a.width,
        a.height,
    )?;
    let spec = SceneSpec {
        intrinsics,
        depth_model: a.depth.parse::<DepthModel>()?,
        texture_model: a.texture.parse::<TextureModel>()?,
        motion: parse_motion_list(&a.motion)?,
        outlier_fraction: a.outlier_fraction,
        outlier_magnitude: a.outlier_magnitude,
        noise_sigma: a.noise_sigma,
        seed: a.seed,
    };
    let manifest = write_scene(&spec, &a.out)?;
    emit(out, &format!("{}\n", manifest.path.display()))
}

fn load_depth(path: &Path) -> Result<DepthMap> {
    Raster::read(path)?.to_depth()
}

fn load_image(path: &Path) -> Result<ImageRaster> {
    Raster::read(path)?.to_image()
}

fn check_raster_size(width: usize, height: usize, k: &Intrinsics, what: &str) -> Result<()> {
    if (width, height) != (k.width, k.height) {
        return Err(Error::ShapeMismatch(format!(
            "{what} is {width}x{height} but the intrinsics describe {}x{}",
            k.width, k.height
        )));
    }
    Ok(())
}

fn cmd_solve(a: SolveArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let s = &mut cfg.solver;
    if let Some(v) = a.max_iterations {
        s.max_iterations = v;
    }
    if let Some(v) = a.tol {
        s.convergence_tol = v;
    }
    if let Some(v) = a.min_valid_pixels {
        s.min_valid_pixels = v;
    }
    if a.no_confidence {
        s.use_confidence = false;
    }
    if a.single_iteration {
        s.single_iteration = true;
    }
    if let Some(v) = a.damping {
        s.damping = v;
    }
    if let Some(v) = &a.seed_xi {
        s.seed_xi = parse_motion_list(v)?;
    }
    if a.full_block {
        s.full_block_weight = true;
    }
    let depth_path = required(a.depth.or(cfg.depth), "depth")?;
    let flow_path = required(a.flow.or(cfg.flow), "flow")?;
    let k_path = required(a.intrinsics.or(cfg.intrinsics), "intrinsics")?;
    let residuals_path = a.residuals.or(cfg.residuals);

    let k = read_intrinsics(&k_path)?;
    let depth = load_depth(&depth_path)?;
    let flow = Raster::read(&flow_path)?.to_flow()?;
    check_raster_size(depth.width(), depth.height(), &k, "depth raster")?;
    check_raster_size(flow.width(), flow.height(), &k, "flow raster")?;

    let result = solve(&depth, &flow, &k, &cfg.solver)?;
    if let Some(path) = residuals_path {
        let report = compute_residuals(&depth, &flow, &result.xi, &k, &cfg.solver)?;
        let data = report.to_raster().iter().map(|v| *v as f32).collect();
        Raster::new(k.width, k.height, 2, data)?.write(&path)?;
    }
    let text = if a.pretty {
        let xi = result.xi.to_array();
        let mut s = String::new();
        for (name, v) in ["vx", "vy", "vz", "wx", "wy", "wz"].iter().zip(xi) {
            s += &format!("{name:<12}{v:>24.15e}\n");
        }
        s += &format!("{:<12}{:>24}\n", "iterations", result.iterations);
        s += &format!("{:<12}{:>24}\n", "converged", result.converged);
        s += &format!("{:<12}{:>24.15e}\n", "final cost", result.final_cost);
        s
    } else {
        format!("{result}\n")
    };
    emit(out, &text)
}

fn cmd_eval_traj(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let est_path = required(a.est.or(cfg.est), "est")?;
    let gt_path = required(a.gt.or(cfg.gt), "gt")?;
    let opts = EvalOptions {
        max_dt: a.max_dt.unwrap_or(cfg.max_dt),
        rpe_delta: a.rpe_delta.unwrap_or(cfg.rpe_delta),
    };
    let est = Trajectory::read_tum(&est_path)?;
    let gt = Trajectory::read_tum(&gt_path)?;
    let report = evaluate(&est, &gt, &opts)?;
    let quantiles = report.scale_quantiles();
    let text = if a.pretty {
        let mut s = format!(
            "{:<16}{:>22.12e}\n{:<16}{:>22.12e}\n{:<16}{:>22.12e}\n{:<16}{:>22}\n{:<16}{:>22.12e}\n",
            "ATE (m)",
            report.ate_rmse,
            "RPE (m)",
            report.rpe_trans,
            "RPE (deg)",
            report.rpe_rot,
            "matched",
            report.matched_count,
            "global scale",
            report.scale
        );
        match quantiles {
            Some(q) => {
                for (name, v) in [
                    "scale min",
                    "scale q1",
                    "scale median",
                    "scale q3",
                    "scale max",
                ]
                .iter()
                .zip(q)
                {
                    s += &format!("{name:<16}{v:>22.12e}\n");
                }
            }
            None => s += "per-pose scales unavailable\n",
        }
        if report.low_rank {
            s += "warning: estimate positions are rank deficient\n";
        }
        s
    } else {
        let scales = match quantiles {
            Some(q) => q
                .iter()
                .map(|v| format!("{v:e}"))
                .collect::<Vec<_>>()
                .join(" "),
            None => "none".into(),
        };
        format!(
            "{:e} {:e} {:e} matched {}\nscales {scales}\n",
            report.ate_rmse, report.rpe_trans, report.rpe_rot, report.matched_count
        )
    };
    emit(out, &text)
}

fn cmd_loss(a: LossArgs, out: &mut dyn Write) -> Result<()> {
    let need = |v: &Option<PathBuf>, flag: &str| required(v.clone(), flag);
    let value = match a.name {
        LossName::Berhu => losses::berhu(
            &load_depth(&need(&a.pred, "pred")?)?,
            &load_depth(&need(&a.gt, "gt")?)?,
        )?,
        LossName::Smoothness => losses::smoothness(&load_depth(&need(&a.depth, "depth")?)?)?,
        LossName::Photometric => {
            let baseline = a
                .baseline
                .ok_or_else(|| Error::invalid("missing required input --baseline"))?;
            losses::photometric_lr(
                &load_image(&need(&a.left, "left")?)?,
                &load_image(&need(&a.right, "right")?)?,
                &load_depth(&need(&a.depth, "depth")?)?,
                &load_depth(&need(&a.depth_right, "depth-right")?)?,
                baseline,
                &read_intrinsics(&need(&a.intrinsics, "intrinsics")?)?,
            )?
        }
        LossName::Combined => {
            let defaults = LossWeights::default();
            let weights = LossWeights::new(
                a.lambda1.unwrap_or(defaults.lambda1),
                a.lambda2.unwrap_or(defaults.lambda2),
                a.lambda3.unwrap_or(defaults.lambda3),
            )?;
            let baseline = a
                .baseline
                .ok_or_else(|| Error::invalid("missing required input --baseline"))?;
            let pred_left = load_depth(&need(&a.pred, "pred")?)?;
            let pred_right = load_depth(&need(&a.pred_right, "pred-right")?)?;
            let gt_left = load_depth(&need(&a.gt, "gt")?)?;
            let gt_right = load_depth(&need(&a.gt_right, "gt-right")?)?;
            let image_left = load_image(&need(&a.left, "left")?)?;
            let image_right = load_image(&need(&a.right, "right")?)?;
            let k = read_intrinsics(&need(&a.intrinsics, "intrinsics")?)?;
            let sample = StereoSample {
                pred_left: &pred_left,
                pred_right: &pred_right,
                gt_left: &gt_left,
                gt_right: &gt_right,
                image_left: &image_left,
                image_right: &image_right,
                baseline,
                intrinsics: &k,
            };
            losses::combined_semisupervised(&sample, &weights)?
        }
        LossName::Posephoto => {
            let (image1, image2) = Raster::read(&need(&a.images, "images")?)?.to_image_pair()?;
            let xi = parse_motion_list(
                a.xi.as_deref()
                    .ok_or_else(|| Error::invalid("missing required input --xi"))?,
            )?;
            losses::pose_photometric(
                &image1,
                &image2,
                &load_depth(&need(&a.depth, "depth")?)?,
                &xi,
                &read_intrinsics(&need(&a.intrinsics, "intrinsics")?)?,
            )?
        }
        LossName::Pose => {
            let xi: MotionVector = parse_motion_list(
                a.xi.as_deref()
                    .ok_or_else(|| Error::invalid("missing required input --xi"))?,
            )?;
            let gt = TransformSE3::exp(&read_motion(&need(&a.gt_motion, "gt-motion")?)?)?;
            losses::pose_loss(&xi, &gt)?
        }
        LossName::Flownll => losses::flow_nll_map(
            &Raster::read(&need(&a.pred, "pred")?)?.to_flow()?,
            &Raster::read(&need(&a.gt, "gt")?)?.to_flow()?,
        )?,
    };
    emit(out, &format!("{value:.11e}\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_from(
            std::iter::once("flowpose").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_args(&[]).0, 2);
        assert_eq!(run_args(&["synth", "--width", "8", "--height", "8"]).0, 2);
        assert_eq!(run_args(&["loss", "nosuch"]).0, 2);
        assert_eq!(run_args(&["loss", "berhu"]).0, 2);
        let (code, out, _) = run_args(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("eval-traj"));
    }

    #[test]
    fn synth_then_solve_recovers_motion() {
        let dir = tempfile::tempdir().unwrap();
        let scene = dir.path().join("scene");
        let scene_str = scene.to_str().unwrap();
        let (code, out, err) = run_args(&[
            "synth",
            "--width",
            "64",
            "--height",
            "48",
            "--depth",
            "smooth:3,0.5",
            "--motion",
            "-0.02,0.01,0.03,0.01,-0.02,0.01",
            "--out",
            scene_str,
        ]);
        assert_eq!(code, 0, "{err}");
        assert!(out.trim().ends_with("manifest.txt"));

        let path = |f: &str| scene.join(f).to_str().unwrap().to_string();
        let (code, out, err) = run_args(&[
            "solve",
            "--depth",
            &path("depth.engr"),
            "--flow",
            &path("flow.engr"),
            "--intrinsics",
            &path("intrinsics.txt"),
        ]);
        assert_eq!(code, 0, "{err}");
        let fields: Vec<&str> = out.split_whitespace().collect();
        assert_eq!(fields.len(), 9);
        let gt = read_motion(&scene.join("motion.txt")).unwrap();
        let xi: Vec<f64> = fields[..6].iter().map(|v| v.parse().unwrap()).collect();
        let err_norm = (MotionVector::new(xi.try_into().unwrap()) - gt).norm();
        assert!(err_norm < 1e-8, "{err_norm}");
        assert_eq!(fields[7], "true");
    }

    #[test]
    fn loss_exit_code_on_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.engr");
        let b = dir.path().join("b.engr");
        Raster::from_depth(&DepthMap::constant(4, 4, 1.0).unwrap())
            .write(&a)
            .unwrap();
        Raster::from_depth(&DepthMap::constant(5, 4, 1.0).unwrap())
            .write(&b)
            .unwrap();
        let (a, b) = (a.to_str().unwrap(), b.to_str().unwrap());
        let (code, out, _) = run_args(&["loss", "berhu", "--pred", a, "--gt", a]);
        assert_eq!((code, out.as_str()), (0, "0.00000000000e0\n"));
        assert_eq!(run_args(&["loss", "berhu", "--pred", a, "--gt", b]).0, 2);
    }
}
