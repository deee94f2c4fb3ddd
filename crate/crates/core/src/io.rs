//! ENGR raster files and the small text formats (intrinsics, motion vector).
//!
//! ENGR layout: magic `ENGR`, then little-endian `u32` version (1), width,
//! height and channel count, then `f32` samples, row-major and
//! channel-interleaved. Invalid pixels are stored as NaN.

use std::path::Path;

use nalgebra::Vector2;

use crate::camera::{DepthMap, ImageRaster, Intrinsics};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::info::InfoParams;
use crate::lie::MotionVector;

pub const ENGR_MAGIC: [u8; 4] = *b"ENGR";
pub const ENGR_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("raster needs at least one channel"));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "raster buffer has {} samples, expected {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    fn from_f64(
        width: usize,
        height: usize,
        channels: usize,
        data: impl IntoIterator<Item = f64>,
    ) -> Self {
        let data: Vec<f32> = data.into_iter().map(|v| v as f32).collect();
        debug_assert_eq!(data.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            data,
        }
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&ENGR_MAGIC);
        for v in [
            ENGR_VERSION,
            self.width as u32,
            self.height as u32,
            self.channels as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "ENGR header truncated ({} bytes)",
                bytes.len()
            )));
        }
        if bytes[..4] != ENGR_MAGIC {
            return Err(Error::Format("bad magic, not an ENGR raster".into()));
        }
        let word = |k: usize| {
            u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().expect("4-byte slice"))
        };
        let version = word(1);
        if version != ENGR_VERSION {
            return Err(Error::Format(format!("unsupported ENGR version {version}")));
        }
        let (width, height, channels) = (word(2) as usize, word(3) as usize, word(4) as usize);
        if channels == 0 {
            return Err(Error::Format("ENGR raster with zero channels".into()));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("ENGR dimensions overflow".into()))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != expected {
            return Err(Error::Format(format!(
                "ENGR body has {} bytes, expected {expected}",
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    fn expect_channels(&self, channels: usize, what: &str) -> Result<()> {
        if self.channels != channels {
            return Err(Error::ShapeMismatch(format!(
                "{what} raster needs {channels} channel(s), file has {}",
                self.channels
            )));
        }
        Ok(())
    }

    pub fn from_depth(depth: &DepthMap) -> Self {
        let data = depth
            .values()
            .iter()
            .zip(depth.mask())
            .map(|(d, m)| if *m { *d } else { f64::NAN });
        Self::from_f64(depth.width(), depth.height(), 1, data)
    }

    pub fn to_depth(&self) -> Result<DepthMap> {
        self.expect_channels(1, "depth")?;
        DepthMap::new(
            self.width,
            self.height,
            self.data.iter().map(|v| *v as f64).collect(),
        )
    }

    /// Five channels per pixel: flow x, flow y (pixels), alpha, beta, gamma.
    pub fn from_flow(flow: &FlowField) -> Self {
        let data = (0..flow.len()).flat_map(|i| match flow.flow_px(i) {
            Some(f) => {
                let p = flow.info(i);
                [f.x, f.y, p.alpha_hat, p.beta_hat, p.gamma_hat]
            }
            None => [f64::NAN; 5],
        });
        Self::from_f64(flow.width(), flow.height(), 5, data.collect::<Vec<_>>())
    }

    /// A pixel is valid when all five channels are finite.
    pub fn to_flow(&self) -> Result<FlowField> {
        self.expect_channels(5, "flow")?;
        let n = self.width * self.height;
        let mut flow = Vec::with_capacity(n);
        let mut info = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        for px in self.data.chunks_exact(5) {
            let ok = px.iter().all(|v| v.is_finite());
            let v = |k: usize| if ok { px[k] as f64 } else { 0.0 };
            flow.push(Vector2::new(v(0), v(1)));
            info.push(InfoParams::new(v(2), v(3), v(4)));
            valid.push(ok);
        }
        FlowField::new(self.width, self.height, flow, info, valid)
    }

    pub fn from_image(image: &ImageRaster) -> Self {
        Self::from_f64(
            image.width(),
            image.height(),
            image.channels(),
            image.data().iter().copied(),
        )
    }

    pub fn to_image(&self) -> Result<ImageRaster> {
        ImageRaster::new(
            self.width,
            self.height,
            self.channels,
            self.data.iter().map(|v| *v as f64).collect(),
        )
    }

    /// Interleaves two same-shaped images: the first image's channels, then the second's.
    pub fn from_image_pair(first: &ImageRaster, second: &ImageRaster) -> Result<Self> {
        first.check_same_shape(second)?;
        let c = first.channels();
        let data = first
            .data()
            .chunks_exact(c)
            .zip(second.data().chunks_exact(c))
            .flat_map(|(a, b)| a.iter().chain(b).copied().collect::<Vec<_>>());
        Ok(Self::from_f64(
            first.width(),
            first.height(),
            2 * c,
            data.collect::<Vec<_>>(),
        ))
    }

    pub fn to_image_pair(&self) -> Result<(ImageRaster, ImageRaster)> {
        if !self.channels.is_multiple_of(2) {
            return Err(Error::ShapeMismatch(format!(
                "image pair raster needs an even channel count, file has {}",
                self.channels
            )));
        }
        let c = self.channels / 2;
        let mut a = Vec::with_capacity(self.data.len() / 2);
        let mut b = Vec::with_capacity(self.data.len() / 2);
        for px in self.data.chunks_exact(self.channels) {
            a.extend(px[..c].iter().map(|v| *v as f64));
            b.extend(px[c..].iter().map(|v| *v as f64));
        }
        Ok((
            ImageRaster::new(self.width, self.height, c, a)?,
            ImageRaster::new(self.width, self.height, c, b)?,
        ))
    }
}

fn parse_numbers(text: &str, count: usize, what: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(format!("{what}: {e}")))?;
    if values.len() != count {
        return Err(Error::Format(format!(
            "{what}: expected {count} values, found {}",
            values.len()
        )));
    }
    Ok(values)
}

/// `fx fy cx cy width height` on one line.
pub fn parse_intrinsics(text: &str) -> Result<Intrinsics> {
    let v = parse_numbers(text, 6, "intrinsics")?;
    let dim = |x: f64| {
        if x.fract() == 0.0 && x >= 1.0 && x <= u32::MAX as f64 {
            Ok(x as usize)
        } else {
            Err(Error::Format(format!(
                "intrinsics: bad image dimension {x}"
            )))
        }
    };
    Intrinsics::new(v[0], v[1], v[2], v[3], dim(v[4])?, dim(v[5])?)
}

pub fn format_intrinsics(k: &Intrinsics) -> String {
    format!(
        "{} {} {} {} {} {}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    )
}

pub fn read_intrinsics(path: &Path) -> Result<Intrinsics> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_intrinsics(&text)
}

pub fn write_intrinsics(k: &Intrinsics, path: &Path) -> Result<()> {
    std::fs::write(path, format_intrinsics(k)).map_err(|e| Error::io(path, e))
}

/// Six whitespace-separated components `vx vy vz wx wy wz`.
pub fn parse_motion(text: &str) -> Result<MotionVector> {
    let v = parse_numbers(text, 6, "motion vector")?;
    Ok(MotionVector::new([v[0], v[1], v[2], v[3], v[4], v[5]]))
}

pub fn format_motion(xi: &MotionVector) -> String {
    let parts: Vec<String> = xi.to_array().iter().map(|v| v.to_string()).collect();
    format!("{}\n", parts.join(" "))
}

pub fn read_motion(path: &Path) -> Result<MotionVector> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_motion(&text)
}

pub fn write_motion(xi: &MotionVector, path: &Path) -> Result<()> {
    std::fs::write(path, format_motion(xi)).map_err(|e| Error::io(path, e))
}
