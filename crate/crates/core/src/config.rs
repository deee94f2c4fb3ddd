//! Line-oriented `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown or repeated keys are
//! rejected. Command-line flags are applied on top of the parsed values.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lie::MotionVector;
use crate::solver::SolverConfig;
use crate::trajectory::DEFAULT_MAX_DT;

pub const KNOWN_KEYS: &[&str] = &[
    "max_iterations",
    "convergence_tol",
    "min_valid_pixels",
    "use_confidence",
    "single_iteration",
    "damping",
    "seed_xi",
    "full_block_weight",
    "intrinsics",
    "depth",
    "flow",
    "residuals",
    "est",
    "gt",
    "rpe_delta",
    "max_dt",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub intrinsics: Option<PathBuf>,
    pub depth: Option<PathBuf>,
    pub flow: Option<PathBuf>,
    pub residuals: Option<PathBuf>,
    pub est: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub rpe_delta: usize,
    pub max_dt: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            intrinsics: None,
            depth: None,
            flow: None,
            residuals: None,
            est: None,
            gt: None,
            rpe_delta: 1,
            max_dt: DEFAULT_MAX_DT,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("config key '{key}': cannot parse '{value}'")))
}

/// Six comma-separated components.
pub fn parse_motion_list(s: &str) -> Result<MotionVector> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 6 {
        return Err(Error::invalid(format!(
            "motion vector needs 6 comma-separated values, got '{s}'"
        )));
    }
    let mut v = [0.0; 6];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p
            .parse()
            .map_err(|_| Error::invalid(format!("motion vector: cannot parse '{p}'")))?;
    }
    Ok(MotionVector::new(v))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!(
                    "config line {}: expected 'key = value'",
                    lineno + 1
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::invalid(format!(
                    "config line {}: unknown key '{key}'",
                    lineno + 1
                )));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::invalid(format!(
                    "config line {}: repeated key '{key}'",
                    lineno + 1
                )));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.solver;
        match key {
            "max_iterations" => s.max_iterations = parse_value(key, value)?,
            "convergence_tol" => s.convergence_tol = parse_value(key, value)?,
            "min_valid_pixels" => s.min_valid_pixels = parse_value(key, value)?,
            "use_confidence" => s.use_confidence = parse_value(key, value)?,
            "single_iteration" => s.single_iteration = parse_value(key, value)?,
            "damping" => s.damping = parse_value(key, value)?,
            "seed_xi" => s.seed_xi = parse_motion_list(value)?,
            "full_block_weight" => s.full_block_weight = parse_value(key, value)?,
            "intrinsics" => self.intrinsics = Some(value.into()),
            "depth" => self.depth = Some(value.into()),
            "flow" => self.flow = Some(value.into()),
            "residuals" => self.residuals = Some(value.into()),
            "est" => self.est = Some(value.into()),
            "gt" => self.gt = Some(value.into()),
            "rpe_delta" => self.rpe_delta = parse_value(key, value)?,
            "max_dt" => self.max_dt = parse_value(key, value)?,
            _ => unreachable!("key list and setter disagree on '{key}'"),
        }
        Ok(())
    }
}
