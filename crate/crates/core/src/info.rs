//! 2x2 flow information matrix built from three unconstrained parameters,
//! and the Gaussian negative log-likelihood on top of it.
//!
//! With raw outputs `(a, b, g)` the matrix is
//!
//! ```text
//! c_x  = exp(a)
//! c_y  = exp(g)
//! c_xy = exp((a + g) / 2) * tanh(b)
//! ```
//!
//! so `det = exp(a + g) * sech^2(b) > 0` for every finite input.

use std::f64::consts::LN_2;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};

/// Raw per-pixel parameters as a network would emit them.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InfoParams {
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub gamma_hat: f64,
}

impl InfoParams {
    pub fn new(alpha_hat: f64, beta_hat: f64, gamma_hat: f64) -> Self {
        Self {
            alpha_hat,
            beta_hat,
            gamma_hat,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha_hat.is_finite() && self.beta_hat.is_finite() && self.gamma_hat.is_finite()
    }

    /// Diagonal confidences `(c_x, c_y)` consumed by the pose solver.
    pub fn confidences(&self) -> (f64, f64) {
        (self.alpha_hat.exp(), self.gamma_hat.exp())
    }
}

/// `ln(sech^2(b))`, stable for any finite `b`.
fn ln_sech2(b: f64) -> f64 {
    let a = b.abs();
    2.0 * LN_2 - 2.0 * a - 2.0 * (-2.0 * a).exp().ln_1p()
}

/// Symmetric positive-definite `[[c_x, c_xy], [c_xy, c_y]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InfoMatrix {
    c_x: f64,
    c_y: f64,
    c_xy: f64,
    log_det: f64,
}

impl InfoMatrix {
    pub fn identity() -> Self {
        Self {
            c_x: 1.0,
            c_y: 1.0,
            c_xy: 0.0,
            log_det: 0.0,
        }
    }

    /// Assembles the matrix from the raw parameters.
    pub fn build(p: &InfoParams) -> Result<Self> {
        if !p.is_finite() {
            return Err(Error::invalid("information parameters must be finite"));
        }
        let scale = (0.5 * (p.alpha_hat + p.gamma_hat)).exp();
        Ok(Self {
            c_x: p.alpha_hat.exp(),
            c_y: p.gamma_hat.exp(),
            c_xy: scale * p.beta_hat.tanh(),
            log_det: p.alpha_hat + p.gamma_hat + ln_sech2(p.beta_hat),
        })
    }

    /// From explicit entries; rejects anything that is not positive-definite.
    pub fn from_entries(c_x: f64, c_y: f64, c_xy: f64) -> Result<Self> {
        let det = c_x * c_y - c_xy * c_xy;
        if !(c_x > 0.0 && c_y > 0.0 && det > 0.0 && det.is_finite()) {
            return Err(Error::invalid(format!(
                "[[{c_x}, {c_xy}], [{c_xy}, {c_y}]] is not positive-definite"
            )));
        }
        Ok(Self {
            c_x,
            c_y,
            c_xy,
            log_det: det.ln(),
        })
    }

    pub fn c_x(&self) -> f64 {
        self.c_x
    }

    pub fn c_y(&self) -> f64 {
        self.c_y
    }

    pub fn c_xy(&self) -> f64 {
        self.c_xy
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.c_x, self.c_xy, self.c_xy, self.c_y)
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn determinant(&self) -> f64 {
        self.log_det.exp()
    }

    /// `(smaller, larger)`; the smaller one is `det / larger` so it stays
    /// positive even when `|c_xy|` rounds up to `sqrt(c_x c_y)`.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let half_gap = (0.5 * (self.c_x - self.c_y)).hypot(self.c_xy);
        let larger = 0.5 * (self.c_x + self.c_y) + half_gap;
        (self.determinant() / larger, larger)
    }

    pub fn quadratic_form(&self, r: &Vector2<f64>) -> f64 {
        self.c_x * r.x * r.x + 2.0 * self.c_xy * r.x * r.y + self.c_y * r.y * r.y
    }
}

/// `0.5 * (r^T M r - ln det M)`.
pub fn flow_nll(residual: &Vector2<f64>, m: &InfoMatrix) -> f64 {
    0.5 * (m.quadratic_form(residual) - m.log_det())
}

/// Analytic gradient of [`flow_nll`] through [`InfoMatrix::build`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NllGradient {
    pub residual: Vector2<f64>,
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub gamma_hat: f64,
}

impl NllGradient {
    /// `(dr_x, dr_y, d alpha_hat, d beta_hat, d gamma_hat)`.
    pub fn to_array(&self) -> [f64; 5] {
        [
            self.residual.x,
            self.residual.y,
            self.alpha_hat,
            self.beta_hat,
            self.gamma_hat,
        ]
    }
}

pub fn nll_gradients(residual: &Vector2<f64>, p: &InfoParams) -> Result<NllGradient> {
    let m = InfoMatrix::build(p)?;
    let (rx, ry) = (residual.x, residual.y);
    let tanh = p.beta_hat.tanh();
    let sech2 = ln_sech2(p.beta_hat).exp();
    let scale = (0.5 * (p.alpha_hat + p.gamma_hat)).exp();
    let cross = m.c_xy * rx * ry;
    Ok(NllGradient {
        residual: m.matrix() * residual,
        alpha_hat: 0.5 * (m.c_x * rx * rx + cross - 1.0),
        beta_hat: scale * sech2 * rx * ry + tanh,
        gamma_hat: 0.5 * (m.c_y * ry * ry + cross - 1.0),
    })
}
