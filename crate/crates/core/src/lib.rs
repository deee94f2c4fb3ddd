//! Camera pose estimation from dense optical flow with per-pixel
//! information matrices, plus the geometry, losses, trajectory metrics and
//! synthetic-scene tooling around it.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod cli;
pub mod config;
pub mod error;
pub mod flow;
pub mod info;
pub mod io;
pub mod lie;
pub mod losses;
pub mod solver;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
