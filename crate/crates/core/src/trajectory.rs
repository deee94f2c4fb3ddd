//! Trajectories: chaining relative motions, timestamp association,
//! similarity alignment, ATE / RPE and TUM text IO.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::lie::{MotionVector, TransformSE3};

pub const DEFAULT_MAX_DT: f64 = 0.02;

/// Relative translations shorter than this are skipped in the scale ratios.
pub const MIN_SCALE_STEP: f64 = 1e-9;

/// Singular-value threshold below which the centred positions count as rank deficient.
pub const LOW_RANK_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSample {
    pub timestamp: f64,
    /// World-from-camera.
    pub pose: TransformSE3,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    samples: Vec<PoseSample>,
}

impl Trajectory {
    pub fn new(samples: Vec<PoseSample>) -> Result<Self> {
        for s in &samples {
            if !s.timestamp.is_finite() {
                return Err(Error::invalid("trajectory timestamps must be finite"));
            }
        }
        if let Some(w) = samples
            .windows(2)
            .find(|w| w[1].timestamp <= w[0].timestamp)
        {
            return Err(Error::invalid(format!(
                "timestamps must be strictly increasing ({} then {})",
                w[0].timestamp, w[1].timestamp
            )));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[PoseSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn pose(&self, i: usize) -> &TransformSE3 {
        &self.samples[i].pose
    }

    pub fn timestamp(&self, i: usize) -> f64 {
        self.samples[i].timestamp
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        self.samples[i].pose.translation()
    }

    /// Applies `f` to every pose, keeping timestamps.
    pub fn map_poses(&self, f: impl Fn(&TransformSE3) -> TransformSE3) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| PoseSample {
                    timestamp: s.timestamp,
                    pose: f(&s.pose),
                })
                .collect(),
        }
    }

    /// Parses TUM text: `timestamp tx ty tz qx qy qz qw`, `#` comments.
    pub fn from_tum_str(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
            if fields.len() != 8 {
                return Err(Error::Format(format!(
                    "line {}: expected 8 fields, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            if !fields.iter().all(|v| v.is_finite()) {
                return Err(Error::Format(format!(
                    "line {}: non-finite value",
                    lineno + 1
                )));
            }
            let q = Quaternion::new(fields[7], fields[4], fields[5], fields[6]);
            if q.norm() < 1e-12 {
                return Err(Error::Format(format!(
                    "line {}: zero quaternion",
                    lineno + 1
                )));
            }
            let rotation = UnitQuaternion::from_quaternion(q)
                .to_rotation_matrix()
                .into_inner();
            samples.push(PoseSample {
                timestamp: fields[0],
                pose: TransformSE3::from_parts(
                    rotation,
                    Vector3::new(fields[1], fields[2], fields[3]),
                ),
            });
        }
        Self::new(samples).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_tum_string(&self) -> String {
        let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
        for s in &self.samples {
            let t = s.pose.translation();
            let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
                s.pose.rotation(),
            ));
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {}",
                format_timestamp(s.timestamp),
                t.x,
                t.y,
                t.z,
                q.i,
                q.j,
                q.k,
                q.w
            );
        }
        out
    }

    pub fn read_tum(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tum_str(&text)
    }

    pub fn write_tum(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tum_string()).map_err(|e| Error::io(path, e))
    }
}

/// Shortest round-trip decimal, padded to at least six decimals.
fn format_timestamp(t: f64) -> String {
    let s = format!("{t}");
    let decimals = s.split_once('.').map_or(0, |(_, frac)| frac.len());
    if decimals >= 6 {
        s
    } else {
        format!("{t:.6}")
    }
}

/// Chains relative motions into world-from-camera poses.
///
/// `xi_k` maps frame `k-1` points into frame `k`, so
/// `T_k = T_{k-1} * exp(xi_k)^-1` starting from the identity at `origin_timestamp`.
pub fn chain(origin_timestamp: f64, relatives: &[(f64, MotionVector)]) -> Result<Trajectory> {
    let mut samples = Vec::with_capacity(relatives.len() + 1);
    let mut pose = TransformSE3::identity();
    samples.push(PoseSample {
        timestamp: origin_timestamp,
        pose,
    });
    for (t, xi) in relatives {
        pose = pose * TransformSE3::exp(xi)?.inverse();
        samples.push(PoseSample {
            timestamp: *t,
            pose,
        });
    }
    Trajectory::new(samples)
}

/// Greedy nearest-timestamp association: candidate pairs within `max_dt`
/// are taken in order of increasing time gap, each sample at most once.
/// The result is sorted by estimate index.
pub fn associate(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<Vec<(usize, usize)>> {
    if !(max_dt > 0.0 && max_dt.is_finite()) {
        return Err(Error::invalid(format!("max_dt {max_dt} must be positive")));
    }
    let gt_times: Vec<f64> = gt.samples.iter().map(|s| s.timestamp).collect();
    let mut candidates = Vec::new();
    for (i, s) in est.samples.iter().enumerate() {
        let start = gt_times.partition_point(|t| *t < s.timestamp - max_dt);
        for (j, t) in gt_times.iter().enumerate().skip(start) {
            let dt = (t - s.timestamp).abs();
            if *t > s.timestamp + max_dt {
                break;
            }
            if dt <= max_dt {
                candidates.push((dt, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_est = vec![false; est.len()];
    let mut used_gt = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_est[i] && !used_gt[j] {
            used_est[i] = true;
            used_gt[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    if pairs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "only {} timestamp matches within {max_dt} s",
            pairs.len()
        )));
    }
    Ok(pairs)
}

/// Similarity `p -> scale * rotation * p + translation` mapping estimate
/// positions onto ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sim3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Sim3 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn apply_pose(&self, pose: &TransformSE3) -> TransformSE3 {
        TransformSE3::from_parts(
            self.rotation * pose.rotation(),
            self.apply_point(&pose.translation()),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub aligned: Trajectory,
    pub transform: Sim3,
    pub per_pose_scales: Vec<f64>,
    /// Centred estimate positions have rank below two.
    pub low_rank: bool,
}

/// Closed-form similarity alignment of the matched estimate positions onto
/// ground truth (orthogonal Procrustes with a global least-squares scale),
/// plus `|dt_gt| / |dt_est|` for every adjacent matched pair.
pub fn align_and_scale(
    est: &Trajectory,
    gt: &Trajectory,
    pairs: &[(usize, usize)],
) -> Result<Alignment> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "alignment needs at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    check_pairs(est, gt, pairs)?;
    let n = pairs.len() as f64;
    let p: Vec<Vector3<f64>> = pairs.iter().map(|(i, _)| est.position(*i)).collect();
    let g: Vec<Vector3<f64>> = pairs.iter().map(|(_, j)| gt.position(*j)).collect();
    let mu_p = p.iter().sum::<Vector3<f64>>() / n;
    let mu_g = g.iter().sum::<Vector3<f64>>() / n;

    let mut cov = Matrix3::zeros();
    let mut var_p = 0.0;
    let mut spread = Matrix3::zeros();
    for (pi, gi) in p.iter().zip(&g) {
        let dp = pi - mu_p;
        cov += (gi - mu_g) * dp.transpose();
        spread += dp * dp.transpose();
        var_p += dp.norm_squared();
    }
    cov /= n;
    var_p /= n;

    let spread_sv = spread.singular_values();
    let top = spread_sv.max();
    let rank = spread_sv
        .iter()
        .filter(|s| **s > LOW_RANK_TOL * top.max(1.0))
        .count();
    let low_rank = rank < 2;

    let exact = p.iter().zip(&g).all(|(a, b)| a == b);
    let transform = if exact {
        // Zero residual: the identity is an exact minimiser.
        Sim3::identity()
    } else if var_p <= 0.0 {
        Sim3 {
            rotation: Matrix3::identity(),
            translation: mu_g - mu_p,
            scale: 1.0,
        }
    } else {
        let svd = cov.svd(true, true);
        let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
        let mut s = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            s[(2, 2)] = -1.0;
        }
        let rotation = u * s * v_t;
        let trace_ds: f64 = (0..3).map(|k| svd.singular_values[k] * s[(k, k)]).sum();
        let scale = trace_ds / var_p;
        Sim3 {
            rotation,
            translation: mu_g - scale * (rotation * mu_p),
            scale,
        }
    };

    let per_pose_scales = pairs
        .windows(2)
        .filter_map(|w| {
            let d_est = (est.position(w[1].0) - est.position(w[0].0)).norm();
            let d_gt = (gt.position(w[1].1) - gt.position(w[0].1)).norm();
            (d_est >= MIN_SCALE_STEP).then(|| d_gt / d_est)
        })
        .collect();

    Ok(Alignment {
        aligned: est.map_poses(|pose| transform.apply_pose(pose)),
        transform,
        per_pose_scales,
        low_rank,
    })
}

fn check_pairs(est: &Trajectory, gt: &Trajectory, pairs: &[(usize, usize)]) -> Result<()> {
    for (i, j) in pairs {
        if *i >= est.len() || *j >= gt.len() {
            return Err(Error::invalid(format!("pair ({i}, {j}) out of range")));
        }
    }
    Ok(())
}

/// Root-mean-square position error over the pairs.
pub fn ate(aligned: &Trajectory, gt: &Trajectory, pairs: &[(usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData(
            "ATE needs at least one pair".into(),
        ));
    }
    check_pairs(aligned, gt, pairs)?;
    let sum: f64 = pairs
        .iter()
        .map(|(i, j)| (aligned.position(*i) - gt.position(*j)).norm_squared())
        .sum();
    Ok((sum / pairs.len() as f64).sqrt())
}

/// Relative pose error over pair steps of `delta`: `(translation RMSE, rotation RMSE in degrees)`.
pub fn rpe(
    est: &Trajectory,
    gt: &Trajectory,
    pairs: &[(usize, usize)],
    delta: usize,
) -> Result<(f64, f64)> {
    if delta == 0 {
        return Err(Error::invalid("RPE delta must be at least 1"));
    }
    if pairs.len() <= delta {
        return Err(Error::InsufficientData(format!(
            "RPE with delta {delta} needs more than {delta} pairs, got {}",
            pairs.len()
        )));
    }
    check_pairs(est, gt, pairs)?;
    let mut sum_t = 0.0;
    let mut sum_r = 0.0;
    let count = pairs.len() - delta;
    for k in 0..count {
        let (ei, gi) = pairs[k];
        let (ej, gj) = pairs[k + delta];
        let rel_gt = gt.pose(gi).inverse() * *gt.pose(gj);
        let rel_est = est.pose(ei).inverse() * *est.pose(ej);
        if rel_gt == rel_est {
            continue;
        }
        let e = rel_gt.inverse() * rel_est;
        sum_t += e.translation().norm_squared();
        sum_r += e.rotation_angle().to_degrees().powi(2);
    }
    Ok(((sum_t / count as f64).sqrt(), (sum_r / count as f64).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub max_dt: f64,
    pub rpe_delta: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_dt: DEFAULT_MAX_DT,
            rpe_delta: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ate_rmse: f64,
    pub rpe_trans: f64,
    pub rpe_rot: f64,
    pub per_pose_scales: Vec<f64>,
    pub matched_count: usize,
    pub scale: f64,
    pub low_rank: bool,
}

impl EvalReport {
    /// `[min, q1, median, q3, max]` of the per-pose scales.
    pub fn scale_quantiles(&self) -> Option<[f64; 5]> {
        quantiles(&self.per_pose_scales)
    }
}

/// Five-number summary with linear interpolation between order statistics.
pub fn quantiles(values: &[f64]) -> Option<[f64; 5]> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some([v[0], at(0.25), at(0.5), at(0.75), v[v.len() - 1]])
}

/// Associates, aligns with a global similarity, then scores ATE and RPE.
pub fn evaluate(est: &Trajectory, gt: &Trajectory, opts: &EvalOptions) -> Result<EvalReport> {
    let pairs = associate(est, gt, opts.max_dt)?;
    let alignment = align_and_scale(est, gt, &pairs)?;
    let ate_rmse = ate(&alignment.aligned, gt, &pairs)?;
    let (rpe_trans, rpe_rot) = rpe(&alignment.aligned, gt, &pairs, opts.rpe_delta)?;
    Ok(EvalReport {
        ate_rmse,
        rpe_trans,
        rpe_rot,
        per_pose_scales: alignment.per_pose_scales,
        matched_count: pairs.len(),
        scale: alignment.transform.scale,
        low_rank: alignment.low_rank,
    })
}
