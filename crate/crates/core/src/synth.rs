//! Deterministic synthetic scenes: depth, exact flow with confidences,
//! an image pair and the ground-truth motion.
//!
//! All randomness comes from [`SplitMix64`] streams derived from the scene
//! seeds, consumed in a fixed row-major order.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use sha2::{Digest, Sha256};

use crate::camera::{flow_from_pose, warp_image, DepthMap, ImageRaster, Intrinsics};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::info::InfoParams;
use crate::io::{format_intrinsics, format_motion, Raster};
use crate::lie::{MotionVector, TransformSE3};

/// Information parameters given to corrupted pixels.
pub const OUTLIER_INFO: InfoParams = InfoParams {
    alpha_hat: -6.0,
    beta_hat: 0.0,
    gamma_hat: -6.0,
};

/// Base depth of the smooth random model.
pub const SMOOTH_DEPTH_BASE: f64 = 2.0;

const DEPTH_CELL: f64 = 16.0;
const TEXTURE_CELL: f64 = 8.0;
const TEXTURE_FINE_CELL: f64 = 3.0;

const NOISE_STREAM: u64 = 0x6e6f_6973_6566_6c6f;
const OUTLIER_STREAM: u64 = 0x6f75_746c_6965_7273;
const FINE_STREAM: u64 = 0x6669_6e65_7465_7874;

pub const MANIFEST_NAME: &str = "manifest.txt";
pub const DEPTH_FILE: &str = "depth.engr";
pub const FLOW_FILE: &str = "flow.engr";
pub const IMAGES_FILE: &str = "images.engr";
pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const MOTION_FILE: &str = "motion.txt";

/// SplitMix64 generator.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-a, a)`.
    pub fn symmetric(&mut self, a: f64) -> f64 {
        (2.0 * self.next_f64() - 1.0) * a
    }

    /// Uniform in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal pair via Box-Muller.
    pub fn gaussian_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let a = 2.0 * std::f64::consts::PI * u2;
        (r * a.cos(), r * a.sin())
    }
}

/// Lattice value noise in `[-1, 1]` with smoothstep interpolation.
struct ValueNoise {
    cell: f64,
    cols: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(seed: u64, width: usize, height: usize, cell: f64) -> Self {
        let cols = (width as f64 / cell) as usize + 2;
        let rows = (height as f64 / cell) as usize + 2;
        let mut rng = SplitMix64::new(seed);
        let lattice = (0..cols * rows).map(|_| rng.symmetric(1.0)).collect();
        Self {
            cell,
            cols,
            lattice,
        }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        let (gx, gy) = (x as f64 / self.cell, y as f64 / self.cell);
        let (ix, iy) = (gx as usize, gy as usize);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (sx, sy) = (smooth(gx - ix as f64), smooth(gy - iy as f64));
        let v = |i: usize, j: usize| self.lattice[j * self.cols + i];
        let top = v(ix, iy) + sx * (v(ix + 1, iy) - v(ix, iy));
        let bottom = v(ix, iy + 1) + sx * (v(ix + 1, iy + 1) - v(ix, iy + 1));
        top + sy * (bottom - top)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DepthModel {
    Constant(f64),
    /// Points `X` with `normal . X = offset`.
    Plane {
        normal: Vector3<f64>,
        offset: f64,
    },
    /// `SMOOTH_DEPTH_BASE + amplitude * noise`, `amplitude < SMOOTH_DEPTH_BASE`.
    SmoothRandom {
        seed: u64,
        amplitude: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TextureModel {
    Checker(usize),
    SmoothRandom(u64),
}

fn parse_list<T: FromStr>(s: &str, n: usize, what: &str) -> Result<Vec<T>> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != n {
        return Err(Error::invalid(format!(
            "{what} expects {n} comma-separated values, got '{s}'"
        )));
    }
    parts
        .iter()
        .map(|p| {
            p.parse()
                .map_err(|_| Error::invalid(format!("{what}: cannot parse '{p}'")))
        })
        .collect()
}

impl FromStr for DepthModel {
    type Err = Error;

    /// `constant:D`, `plane:NX,NY,NZ,OFFSET` or `smooth:SEED,AMPLITUDE`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("depth model '{s}' needs the form kind:args")))?;
        match kind {
            "constant" => Ok(Self::Constant(parse_list(args, 1, "constant depth")?[0])),
            "plane" => {
                let v: Vec<f64> = parse_list(args, 4, "plane depth")?;
                Ok(Self::Plane {
                    normal: Vector3::new(v[0], v[1], v[2]),
                    offset: v[3],
                })
            }
            "smooth" => {
                let (seed, amp) = args
                    .split_once(',')
                    .ok_or_else(|| Error::invalid("smooth depth expects SEED,AMPLITUDE"))?;
                Ok(Self::SmoothRandom {
                    seed: seed
                        .trim()
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad seed '{seed}'")))?,
                    amplitude: amp
                        .trim()
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad amplitude '{amp}'")))?,
                })
            }
            _ => Err(Error::invalid(format!("unknown depth model '{kind}'"))),
        }
    }
}

impl fmt::Display for DepthModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(d) => write!(f, "constant:{d}"),
            Self::Plane { normal, offset } => {
                write!(f, "plane:{},{},{},{offset}", normal.x, normal.y, normal.z)
            }
            Self::SmoothRandom { seed, amplitude } => write!(f, "smooth:{seed},{amplitude}"),
        }
    }
}

impl FromStr for TextureModel {
    type Err = Error;

    /// `checker:PERIOD` or `smooth:SEED`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').ok_or_else(|| {
            Error::invalid(format!("texture model '{s}' needs the form kind:arg"))
        })?;
        match kind {
            "checker" => {
                Ok(Self::Checker(arg.trim().parse().map_err(|_| {
                    Error::invalid(format!("bad checker period '{arg}'"))
                })?))
            }
            "smooth" => {
                Ok(Self::SmoothRandom(arg.trim().parse().map_err(|_| {
                    Error::invalid(format!("bad texture seed '{arg}'"))
                })?))
            }
            _ => Err(Error::invalid(format!("unknown texture model '{kind}'"))),
        }
    }
}

impl fmt::Display for TextureModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Checker(p) => write!(f, "checker:{p}"),
            Self::SmoothRandom(seed) => write!(f, "smooth:{seed}"),
        }
    }
}

impl DepthModel {
    /// Depth map over the raster, rounded to `f32` precision so that the
    /// stored raster and the in-memory map agree exactly.
    pub fn render(&self, k: &Intrinsics) -> Result<DepthMap> {
        let (w, h) = (k.width, k.height);
        let raw: Vec<f64> = match *self {
            Self::Constant(d) => vec![d; w * h],
            Self::Plane { normal, offset } => (0..h)
                .flat_map(|y| (0..w).map(move |x| (x, y)))
                .map(|(x, y)| {
                    let uv = k.pixel_to_normalised(Vector2::new(x as f64, y as f64));
                    offset / normal.dot(&Vector3::new(uv.x, uv.y, 1.0))
                })
                .collect(),
            Self::SmoothRandom { seed, amplitude } => {
                if !(0.0..SMOOTH_DEPTH_BASE).contains(&amplitude) {
                    return Err(Error::invalid(format!(
                        "smooth depth amplitude {amplitude} must lie in [0, {SMOOTH_DEPTH_BASE})"
                    )));
                }
                let noise = ValueNoise::new(seed, w, h, DEPTH_CELL);
                (0..h)
                    .flat_map(|y| (0..w).map(move |x| (x, y)))
                    .map(|(x, y)| SMOOTH_DEPTH_BASE + amplitude * noise.at(x, y))
                    .collect()
            }
        };
        let data: Vec<f64> = raw.into_iter().map(|d| d as f32 as f64).collect();
        if let Some(bad) = data.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::invalid(format!(
                "depth model {self} yields non-positive depth {bad}"
            )));
        }
        DepthMap::new(w, h, data)
    }
}

impl TextureModel {
    pub fn render(&self, width: usize, height: usize) -> Result<ImageRaster> {
        match *self {
            Self::Checker(period) => {
                if period == 0 {
                    return Err(Error::invalid("checker period must be positive"));
                }
                ImageRaster::from_fn(width, height, |x, y| {
                    if (x / period + y / period) % 2 == 0 {
                        0.2
                    } else {
                        0.8
                    }
                })
            }
            Self::SmoothRandom(seed) => {
                let coarse = ValueNoise::new(seed, width, height, TEXTURE_CELL);
                let fine = ValueNoise::new(seed ^ FINE_STREAM, width, height, TEXTURE_FINE_CELL);
                ImageRaster::from_fn(width, height, |x, y| {
                    0.5 + 0.3 * coarse.at(x, y) + 0.15 * fine.at(x, y)
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub intrinsics: Intrinsics,
    pub depth_model: DepthModel,
    pub texture_model: TextureModel,
    pub motion: MotionVector,
    pub outlier_fraction: f64,
    /// Pixels.
    pub outlier_magnitude: f64,
    /// Pixels.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// Noise- and outlier-free scene with a smooth random texture.
    pub fn clean(intrinsics: Intrinsics, depth_model: DepthModel, motion: MotionVector) -> Self {
        Self {
            intrinsics,
            depth_model,
            texture_model: TextureModel::SmoothRandom(0),
            motion,
            outlier_fraction: 0.0,
            outlier_magnitude: 0.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::invalid(format!(
                "outlier fraction {} must lie in [0, 1)",
                self.outlier_fraction
            )));
        }
        if !(self.outlier_magnitude >= 0.0 && self.outlier_magnitude.is_finite()) {
            return Err(Error::invalid(
                "outlier magnitude must be finite and non-negative",
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(
                "noise sigma must be finite and non-negative",
            ));
        }
        if !self.motion.is_finite() {
            return Err(Error::invalid("motion vector must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub depth: DepthMap,
    /// Flow from the first frame into the second, in pixels, with info params.
    pub flow: FlowField,
    /// Rendered by pulling `image2` through the depth and motion.
    pub image1: ImageRaster,
    /// Textured frame.
    pub image2: ImageRaster,
    /// Pixels where `image1` could be rendered.
    pub image1_mask: Vec<bool>,
    pub ground_truth: TransformSE3,
    /// Row-major indices of corrupted pixels, in ascending order.
    pub outliers: Vec<usize>,
}

/// Renders a scene from its spec.
pub fn render(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let k = &spec.intrinsics;
    let depth = spec.depth_model.render(k)?;
    let ground_truth = TransformSE3::exp(&spec.motion)?;
    let mut flow = flow_from_pose(&depth, &ground_truth, k)?;
    let image2 = spec.texture_model.render(k.width, k.height)?;
    let (image1, image1_mask) = warp_image(&image2, &depth, &ground_truth, k)?;

    let valid: Vec<usize> = (0..flow.len()).filter(|i| flow.is_valid(*i)).collect();

    if spec.noise_sigma > 0.0 {
        let mut rng = SplitMix64::new(spec.seed ^ NOISE_STREAM);
        let ln_conf = -2.0 * spec.noise_sigma.ln();
        let info = InfoParams::new(ln_conf, 0.0, ln_conf);
        for &i in &valid {
            let (a, b) = rng.gaussian_pair();
            let f = flow.raw_flow()[i];
            flow.set_flow(i, f + spec.noise_sigma * Vector2::new(a, b));
            flow.set_info(i, info);
        }
    }

    let n_out = (spec.outlier_fraction * valid.len() as f64).round() as usize;
    let mut outliers = Vec::with_capacity(n_out);
    if n_out > 0 {
        let mut rng = SplitMix64::new(spec.seed ^ OUTLIER_STREAM);
        let mut pool = valid.clone();
        for slot in 0..n_out {
            let pick = slot + rng.below(pool.len() - slot);
            pool.swap(slot, pick);
            let i = pool[slot];
            let f = flow.raw_flow()[i];
            let m = spec.outlier_magnitude;
            flow.set_flow(i, f + Vector2::new(rng.symmetric(m), rng.symmetric(m)));
            flow.set_info(i, OUTLIER_INFO);
            outliers.push(i);
        }
        outliers.sort_unstable();
    }

    Ok(Scene {
        depth,
        flow,
        image1,
        image2,
        image1_mask,
        ground_truth,
        outliers,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub path: PathBuf,
    /// `(file name, sha-256 hex)` in write order.
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(name, hash)| format!("{name} {hash}\n"))
            .collect()
    }
}

/// Renders `spec` and writes the five scene artifacts plus `manifest.txt`
/// into `dir`, creating it if needed.
pub fn write_scene(spec: &SceneSpec, dir: &Path) -> Result<Manifest> {
    let scene = render(spec)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let artifacts: [(&str, Vec<u8>); 5] = [
        (DEPTH_FILE, Raster::from_depth(&scene.depth).encode()),
        (FLOW_FILE, Raster::from_flow(&scene.flow).encode()),
        (
            IMAGES_FILE,
            Raster::from_image_pair(&scene.image1, &scene.image2)?.encode(),
        ),
        (
            INTRINSICS_FILE,
            format_intrinsics(&spec.intrinsics).into_bytes(),
        ),
        (MOTION_FILE, format_motion(&spec.motion).into_bytes()),
    ];
    let mut entries = Vec::with_capacity(artifacts.len());
    for (name, bytes) in &artifacts {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.push((name.to_string(), hex::encode(Sha256::digest(bytes))));
    }
    let manifest = Manifest {
        path: dir.join(MANIFEST_NAME),
        entries,
    };
    std::fs::write(&manifest.path, manifest.to_text()).map_err(|e| Error::io(&manifest.path, e))?;
    Ok(manifest)
}
