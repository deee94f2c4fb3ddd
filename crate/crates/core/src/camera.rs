//! Pinhole camera model, rasters, bilinear sampling and depth-based warping.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::lie::{InverseDepthPoint, TransformSE3, CHEIRALITY_EPS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid("focal lengths must be finite and positive"));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(Error::invalid(format!(
                "cx = {} outside (0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid(format!(
                "cy = {} outside (0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel_to_normalised(&self, pixel: Vector2<f64>) -> Vector2<f64> {
        Vector2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy)
    }

    pub fn normalised_to_pixel(&self, uv: Vector2<f64>) -> Vector2<f64> {
        Vector2::new(uv.x * self.fx + self.cx, uv.y * self.fy + self.cy)
    }

    fn check_dims(&self, width: usize, height: usize, what: &str) -> Result<()> {
        if width != self.width || height != self.height {
            return Err(Error::ShapeMismatch(format!(
                "{what} is {width}x{height}, intrinsics are {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Metric depth raster with a validity mask; valid entries are finite and positive.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a depth map, marking non-finite or non-positive entries invalid.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "depth buffer has {} entries, expected {}",
                data.len(),
                width * height
            )));
        }
        let valid = data.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        Ok(Self {
            width,
            height,
            data,
            valid,
        })
    }

    /// Like [`DepthMap::new`] with an extra caller mask; a pixel is valid only
    /// when both the mask and the value agree.
    pub fn with_mask(width: usize, height: usize, data: Vec<f64>, mask: &[bool]) -> Result<Self> {
        let mut d = Self::new(width, height, data)?;
        if mask.len() != d.valid.len() {
            return Err(Error::ShapeMismatch("depth mask length".into()));
        }
        for (v, m) in d.valid.iter_mut().zip(mask) {
            *v &= *m;
        }
        Ok(d)
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, data)
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::new(width, height, vec![depth; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.data[i])
    }
}

/// Intensity raster, channel-interleaved, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRaster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageRaster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "image buffer has {} entries, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("image contains non-finite intensities"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Single-channel image from a per-pixel function.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, 1, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    fn same_shape(&self, other: &ImageRaster) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn check_same_shape(&self, other: &ImageRaster) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "images are {}x{}x{} and {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )));
        }
        Ok(())
    }
}

/// `(x0 / x2, x1 / x2)`.
pub fn project(x: &Vector3<f64>) -> Result<Vector2<f64>> {
    if !(x.z > CHEIRALITY_EPS) {
        return Err(Error::Cheirality { depth: x.z });
    }
    Ok(Vector2::new(x.x / x.z, x.y / x.z))
}

/// `depth * K^-1 (u, 1)`.
pub fn backproject(depth: f64, pixel: Vector2<f64>, k: &Intrinsics) -> Result<Vector3<f64>> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(Error::invalid(format!("depth {depth} is not positive")));
    }
    let uv = k.pixel_to_normalised(pixel);
    Ok(Vector3::new(uv.x, uv.y, 1.0) * depth)
}

/// Writes the bilinear sample into `out`; false when `(x, y)` is outside
/// `[0, width-1] x [0, height-1]`.
pub(crate) fn sample_into(img: &ImageRaster, x: f64, y: f64, out: &mut [f64]) -> bool {
    let (w, h) = (img.width, img.height);
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return false;
    }
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (ax, ay) = (x - x0 as f64, y - y0 as f64);
    let (p00, p10, p01, p11) = (
        img.pixel(x0, y0),
        img.pixel(x1, y0),
        img.pixel(x0, y1),
        img.pixel(x1, y1),
    );
    for c in 0..img.channels {
        let top = p00[c] + ax * (p10[c] - p00[c]);
        let bottom = p01[c] + ax * (p11[c] - p01[c]);
        out[c] = top + ay * (bottom - top);
    }
    true
}

/// Four-neighbour bilinear sample; `None` out of bounds.
pub fn bilinear_sample(img: &ImageRaster, pixel: Vector2<f64>) -> Option<Vec<f64>> {
    let mut out = vec![0.0; img.channels];
    sample_into(img, pixel.x, pixel.y, &mut out).then_some(out)
}

/// Where pixel `(x, y)` of the depth map's frame lands in the other frame, in pixels.
fn warp_target(
    depth: f64,
    x: usize,
    y: usize,
    t: &TransformSE3,
    k: &Intrinsics,
) -> Option<Vector2<f64>> {
    let p = backproject(depth, Vector2::new(x as f64, y as f64), k).ok()?;
    let uv = project(&t.transform_point(&p)).ok()?;
    Some(k.normalised_to_pixel(uv))
}

/// Pulls `src` into the depth map's frame: `out(u) = src(pi(K T pi^-1(D(u), u)))`.
///
/// Pixels whose target is behind the camera or outside `src` are invalid and
/// hold zeros.
pub fn warp_image(
    src: &ImageRaster,
    depth: &DepthMap,
    t: &TransformSE3,
    k: &Intrinsics,
) -> Result<(ImageRaster, Vec<bool>)> {
    k.check_dims(src.width, src.height, "source image")?;
    k.check_dims(depth.width, depth.height, "depth map")?;
    let ch = src.channels;
    let mut data = vec![0.0; src.data.len()];
    let mut mask = vec![false; k.pixel_count()];
    for y in 0..k.height {
        for x in 0..k.width {
            let i = y * k.width + x;
            let Some(d) = depth.get(x, y) else { continue };
            let Some(target) = warp_target(d, x, y, t, k) else {
                continue;
            };
            mask[i] = sample_into(src, target.x, target.y, &mut data[i * ch..(i + 1) * ch]);
        }
    }
    Ok((ImageRaster::new(k.width, k.height, ch, data)?, mask))
}

/// Per-pixel flow in normalised units via the inverse-depth action of `t`.
///
/// `None` where the depth is invalid or the point fails cheirality.
pub fn normalised_flow_from_pose(
    depth: &DepthMap,
    t: &TransformSE3,
    k: &Intrinsics,
) -> Result<Vec<Option<Vector2<f64>>>> {
    k.check_dims(depth.width, depth.height, "depth map")?;
    let mut out = Vec::with_capacity(k.pixel_count());
    for y in 0..k.height {
        for x in 0..k.width {
            let flow = depth.get(x, y).and_then(|d| {
                let uv = k.pixel_to_normalised(Vector2::new(x as f64, y as f64));
                let moved = t
                    .apply(&InverseDepthPoint::from_depth(uv.x, uv.y, d))
                    .ok()?;
                Some(Vector2::new(moved.u - uv.x, moved.v - uv.y))
            });
            out.push(flow);
        }
    }
    Ok(out)
}

/// Flow field in pixel units induced by `t` on `depth`; info params are zero.
pub fn flow_from_pose(depth: &DepthMap, t: &TransformSE3, k: &Intrinsics) -> Result<FlowField> {
    let normalised = normalised_flow_from_pose(depth, t, k)?;
    let flow = normalised
        .iter()
        .map(|f| f.map(|f| Vector2::new(f.x * k.fx, f.y * k.fy)))
        .collect::<Vec<_>>();
    Ok(FlowField::from_optional_flow(k.width, k.height, &flow))
}
