//! Dense flow field: per-pixel flow in pixels plus raw information parameters.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::info::InfoParams;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    flow: Vec<Vector2<f64>>,
    info: Vec<InfoParams>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn new(
        width: usize,
        height: usize,
        flow: Vec<Vector2<f64>>,
        info: Vec<InfoParams>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height;
        if flow.len() != n || info.len() != n || valid.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "flow field buffers must all hold {n} entries"
            )));
        }
        for i in 0..n {
            if valid[i] && !(flow[i].iter().all(|v| v.is_finite()) && info[i].is_finite()) {
                return Err(Error::invalid(format!(
                    "non-finite flow at valid pixel {i}"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            flow,
            info,
            valid,
        })
    }

    /// Flow-only field; `None` entries become invalid, info params are zero.
    pub fn from_optional_flow(width: usize, height: usize, flow: &[Option<Vector2<f64>>]) -> Self {
        let valid = flow.iter().map(Option::is_some).collect();
        let flow = flow
            .iter()
            .map(|f| f.unwrap_or_else(Vector2::zeros))
            .collect();
        Self {
            width,
            height,
            flow,
            info: vec![InfoParams::default(); width * height],
            valid,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            flow: vec![Vector2::zeros(); n],
            info: vec![InfoParams::default(); n],
            valid: vec![true; n],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.flow.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flow.is_empty()
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn flow_px(&self, i: usize) -> Option<Vector2<f64>> {
        self.valid[i].then_some(self.flow[i])
    }

    pub fn info(&self, i: usize) -> InfoParams {
        self.info[i]
    }

    pub fn raw_flow(&self) -> &[Vector2<f64>] {
        &self.flow
    }

    pub fn raw_info(&self) -> &[InfoParams] {
        &self.info
    }

    pub fn set_flow(&mut self, i: usize, flow: Vector2<f64>) {
        self.flow[i] = flow;
    }

    pub fn set_info(&mut self, i: usize, info: InfoParams) {
        self.info[i] = info;
    }

    pub fn invalidate(&mut self, i: usize) {
        self.valid[i] = false;
    }

    /// Multiplies every confidence by `k > 0`, i.e. shifts alpha and gamma by `ln k`.
    pub fn scale_confidences(&mut self, k: f64) {
        let shift = k.ln();
        for p in &mut self.info {
            p.alpha_hat += shift;
            p.gamma_hat += shift;
        }
    }
}
