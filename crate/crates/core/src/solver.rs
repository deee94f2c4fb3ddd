//! Confidence-weighted iteratively reweighted Gauss-Newton pose estimation
//! from a depth map and a dense flow field.
//!
//! For every valid pixel the point `x = (u, v, 1, q)` is moved by the current
//! estimate `T = exp(xi)`; the estimated flow is `F+ = (T x)[u,v] - x[u,v]`
//! and the residual against the observed flow is `r = F+ - F`, both in
//! normalised camera coordinates. Each iteration minimises
//! `sum r^T W r` with per-pixel weights
//!
//! ```text
//! W = diag(C_x m^2 / (m^2 + r_x^2), C_y m^2 / (m^2 + r_y^2))
//! ```
//!
//! where `m` is the mean residual magnitude over the image and `C_x`, `C_y`
//! are the flow confidences. The update is additive: `xi <- xi + beta`.

use std::fmt;

use nalgebra::{Matrix2, Matrix2x6, Matrix6, Vector2, Vector6};

use crate::camera::{DepthMap, Intrinsics};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::info::{InfoMatrix, InfoParams};
use crate::lie::{left_jacobian, InverseDepthPoint, MotionVector, TransformSE3};

/// Inverse depths outside `[MIN_INVERSE_DEPTH, MAX_INVERSE_DEPTH]` are masked.
pub const MIN_INVERSE_DEPTH: f64 = 1e-4;
pub const MAX_INVERSE_DEPTH: f64 = 1e4;

/// Normal matrices with a larger eigenvalue ratio are treated as degenerate.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop once `|beta| < convergence_tol`.
    pub convergence_tol: f64,
    pub min_valid_pixels: usize,
    pub use_confidence: bool,
    pub single_iteration: bool,
    /// Added to the diagonal of the normal matrix.
    pub damping: f64,
    pub seed_xi: MotionVector,
    /// Use the full 2x2 information block (scaled by the robust factors)
    /// instead of the diagonal confidences.
    pub full_block_weight: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            convergence_tol: 1e-9,
            min_valid_pixels: 64,
            use_confidence: true,
            single_iteration: false,
            damping: 0.0,
            seed_xi: MotionVector::zero(),
            full_block_weight: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::invalid("convergence_tol must be positive"));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::invalid("damping must be finite and non-negative"));
        }
        if !self.seed_xi.is_finite() {
            return Err(Error::invalid("seed_xi must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualReport {
    /// Per-pixel residual in normalised units, `None` where masked.
    pub residuals: Vec<Option<Vector2<f64>>>,
    /// Mean residual magnitude over valid pixels.
    pub m: f64,
    pub weighted_cost: f64,
    pub valid_count: usize,
}

impl ResidualReport {
    /// Two-channel interleaved raster; masked pixels are NaN.
    pub fn to_raster(&self) -> Vec<f64> {
        self.residuals
            .iter()
            .flat_map(|r| match r {
                Some(r) => [r.x, r.y],
                None => [f64::NAN, f64::NAN],
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub xi: MotionVector,
    pub iterations: usize,
    pub converged: bool,
    pub final_cost: f64,
    pub per_iteration_costs: Vec<f64>,
}

/// Single-line record: `xi0 .. xi5 iterations converged final_cost`.
impl fmt::Display for SolveResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.xi.to_array() {
            write!(f, "{c:e} ")?;
        }
        write!(
            f,
            "{} {} {:e}",
            self.iterations, self.converged, self.final_cost
        )
    }
}

/// Derivative of the normalised flow of `p` under a left perturbation of the pose.
pub fn jacobian_row(p: &InverseDepthPoint) -> Matrix2x6<f64> {
    let InverseDepthPoint { u, v, q } = *p;
    Matrix2x6::new(
        q,
        0.0,
        -u * q,
        -u * v,
        u * u + 1.0,
        -v, //
        0.0,
        q,
        -v * q,
        -v * v - 1.0,
        u * v,
        u,
    )
}

/// Diagonal IRLS weight; with `m == 0` the weights collapse to the confidences.
pub fn build_weight(c_x: f64, c_y: f64, r: &Vector2<f64>, m: f64) -> Matrix2<f64> {
    let m2 = m * m;
    if m2 == 0.0 {
        return Matrix2::new(c_x, 0.0, 0.0, c_y);
    }
    Matrix2::new(
        c_x * m2 / (m2 + r.x * r.x),
        0.0,
        0.0,
        c_y * m2 / (m2 + r.y * r.y),
    )
}

struct PixelTerm {
    residual: Vector2<f64>,
    moved: InverseDepthPoint,
    info: InfoParams,
}

impl PixelTerm {
    fn weight(&self, m: f64, config: &SolverConfig) -> Result<Matrix2<f64>> {
        let (c_x, c_y) = if config.use_confidence {
            self.info.confidences()
        } else {
            (1.0, 1.0)
        };
        if config.use_confidence && config.full_block_weight {
            let robust = build_weight(1.0, 1.0, &self.residual, m);
            let s = Matrix2::new(robust[(0, 0)].sqrt(), 0.0, 0.0, robust[(1, 1)].sqrt());
            return Ok(s * InfoMatrix::build(&self.info)?.matrix() * s);
        }
        Ok(build_weight(c_x, c_y, &self.residual, m))
    }
}

fn check_shapes(depth: &DepthMap, flow: &FlowField, k: &Intrinsics) -> Result<()> {
    let dims = [
        (depth.width(), depth.height(), "depth map"),
        (flow.width(), flow.height(), "flow field"),
    ];
    for (w, h, what) in dims {
        if w != k.width || h != k.height {
            return Err(Error::ShapeMismatch(format!(
                "{what} is {w}x{h}, intrinsics are {}x{}",
                k.width, k.height
            )));
        }
    }
    Ok(())
}

/// Residuals of every usable pixel in row-major order, plus the full report.
fn linearise(
    depth: &DepthMap,
    flow: &FlowField,
    xi: &MotionVector,
    k: &Intrinsics,
    config: &SolverConfig,
) -> Result<(Vec<PixelTerm>, ResidualReport)> {
    check_shapes(depth, flow, k)?;
    let t = TransformSE3::exp(xi)?;
    let mut residuals = vec![None; k.pixel_count()];
    let mut terms = Vec::with_capacity(k.pixel_count());
    for y in 0..k.height {
        for x in 0..k.width {
            let i = y * k.width + x;
            let (Some(d), Some(f)) = (depth.get(x, y), flow.flow_px(i)) else {
                continue;
            };
            let q = 1.0 / d;
            if !(MIN_INVERSE_DEPTH..=MAX_INVERSE_DEPTH).contains(&q) {
                continue;
            }
            let u = (x as f64 - k.cx) / k.fx;
            let v = (y as f64 - k.cy) / k.fy;
            let Ok(moved) = t.apply(&InverseDepthPoint::new(u, v, q)) else {
                continue;
            };
            let estimated = Vector2::new(moved.u - u, moved.v - v);
            let observed = Vector2::new(f.x / k.fx, f.y / k.fy);
            let residual = estimated - observed;
            residuals[i] = Some(residual);
            terms.push(PixelTerm {
                residual,
                moved,
                info: flow.info(i),
            });
        }
    }

    let valid_count = terms.len();
    if valid_count < config.min_valid_pixels {
        return Err(Error::InsufficientData(format!(
            "{valid_count} usable pixels, need at least {}",
            config.min_valid_pixels
        )));
    }
    let m = terms.iter().map(|t| t.residual.norm()).sum::<f64>() / valid_count as f64;
    let mut weighted_cost = 0.0;
    for term in &terms {
        let w = term.weight(m, config)?;
        weighted_cost += term.residual.dot(&(w * term.residual));
    }
    Ok((
        terms,
        ResidualReport {
            residuals,
            m,
            weighted_cost,
            valid_count,
        },
    ))
}

pub fn compute_residuals(
    depth: &DepthMap,
    flow: &FlowField,
    xi: &MotionVector,
    k: &Intrinsics,
    config: &SolverConfig,
) -> Result<ResidualReport> {
    linearise(depth, flow, xi, k, config).map(|(_, report)| report)
}

/// One reweighted Gauss-Newton update `beta` around `xi`.
pub fn gauss_newton_step(
    depth: &DepthMap,
    flow: &FlowField,
    xi: &MotionVector,
    k: &Intrinsics,
    config: &SolverConfig,
) -> Result<(MotionVector, ResidualReport)> {
    let (terms, report) = linearise(depth, flow, xi, k, config)?;
    // The pixel Jacobian is taken at the moved point (left perturbation);
    // chaining with the left Jacobian turns it into d r / d xi for the
    // additive update.
    let chain = left_jacobian(xi);
    let mut normal = Matrix6::<f64>::zeros();
    let mut gradient = Vector6::<f64>::zeros();
    for term in &terms {
        let j = jacobian_row(&term.moved) * chain;
        let w = term.weight(report.m, config)?;
        let jt_w = j.transpose() * w;
        normal += jt_w * j;
        gradient += jt_w * term.residual;
    }
    for d in 0..6 {
        normal[(d, d)] += config.damping;
    }

    let eig = normal.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || !(hi / lo <= MAX_CONDITION) {
        return Err(Error::Degenerate(format!(
            "normal matrix eigenvalues span [{lo:e}, {hi:e}]"
        )));
    }
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::Degenerate("normal matrix is not positive-definite".into()))?;
    let beta = -chol.solve(&gradient);
    Ok((MotionVector::from_vector(beta), report))
}

/// Iterates [`gauss_newton_step`] from `config.seed_xi`, recomputing the
/// residuals, `m` and the weights every iteration.
pub fn solve(
    depth: &DepthMap,
    flow: &FlowField,
    k: &Intrinsics,
    config: &SolverConfig,
) -> Result<SolveResult> {
    config.validate()?;
    let mut xi = config.seed_xi;
    let mut per_iteration_costs = Vec::new();
    let mut converged = false;
    while per_iteration_costs.len() < config.max_iterations {
        let (beta, report) = gauss_newton_step(depth, flow, &xi, k, config)?;
        per_iteration_costs.push(report.weighted_cost);
        xi += beta;
        if beta.norm() < config.convergence_tol {
            converged = true;
            break;
        }
        if config.single_iteration {
            break;
        }
    }
    let final_cost = compute_residuals(depth, flow, &xi, k, config)?.weighted_cost;
    Ok(SolveResult {
        xi,
        iterations: per_iteration_costs.len(),
        converged,
        final_cost,
        per_iteration_costs,
    })
}
