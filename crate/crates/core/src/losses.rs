//! Scalar depth, stereo, smoothness, flow and pose losses.
//!
//! Every map-level loss is a mean over the pixels that are valid in all
//! participating rasters, accumulated in row-major order.

use nalgebra::{Vector2, Vector3};

use crate::camera::{warp_image, DepthMap, ImageRaster, Intrinsics};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::info::{flow_nll, InfoMatrix};
use crate::lie::{MotionVector, TransformSE3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 2.0,
            lambda2: 1.0,
            lambda3: (-4.0f64).exp(),
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let w = Self {
            lambda1,
            lambda2,
            lambda3,
        };
        if ![lambda1, lambda2, lambda3]
            .iter()
            .all(|l| l.is_finite() && *l >= 0.0)
        {
            return Err(Error::invalid(
                "loss weights must be finite and non-negative",
            ));
        }
        Ok(w)
    }
}

fn check_depth_shapes(a: &DepthMap, b: &DepthMap) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::ShapeMismatch(format!(
            "depth maps are {}x{} and {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Reverse Huber penalty of a single difference for threshold `c`.
pub fn berhu_pixel(diff: f64, c: f64) -> f64 {
    let a = diff.abs();
    if a <= c {
        a
    } else {
        (diff * diff + c * c) / (2.0 * c)
    }
}

/// Reverse Huber depth loss with `c = max |pred - gt| / 5` over the valid pixels.
pub fn berhu(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    check_depth_shapes(pred, gt)?;
    let diffs: Vec<f64> = pred
        .values()
        .iter()
        .zip(gt.values())
        .zip(pred.mask().iter().zip(gt.mask()))
        .filter(|(_, (a, b))| **a && **b)
        .map(|((p, g), _)| p - g)
        .collect();
    if diffs.is_empty() {
        return Err(Error::invalid("berHu loss needs at least one valid pixel"));
    }
    let c = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs())) / 5.0;
    if c == 0.0 {
        return Ok(0.0);
    }
    Ok(diffs.iter().map(|d| berhu_pixel(*d, c)).sum::<f64>() / diffs.len() as f64)
}

/// Mean over `mask` of the per-pixel channel-averaged absolute difference.
fn masked_abs_mean(a: &ImageRaster, b: &ImageRaster, mask: &[bool]) -> Option<f64> {
    let ch = a.channels();
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, valid) in mask.iter().enumerate() {
        if !valid {
            continue;
        }
        let pa = &a.data()[i * ch..(i + 1) * ch];
        let pb = &b.data()[i * ch..(i + 1) * ch];
        total += pa.iter().zip(pb).map(|(x, y)| (x - y).abs()).sum::<f64>() / ch as f64;
        count += 1;
    }
    (count > 0).then(|| total / count as f64)
}

/// Mean `|target(u) - warp(source)(u)|` with the warp driven by `depth` and `t`.
fn warped_abs_mean(
    target: &ImageRaster,
    source: &ImageRaster,
    depth: &DepthMap,
    t: &TransformSE3,
    k: &Intrinsics,
) -> Result<Option<f64>> {
    target.check_same_shape(source)?;
    let (warped, mut mask) = warp_image(source, depth, t, k)?;
    for (m, d) in mask.iter_mut().zip(depth.mask()) {
        *m &= *d;
    }
    Ok(masked_abs_mean(target, &warped, &mask))
}

/// Left-right photometric consistency of a rectified stereo pair.
///
/// The right camera sits `baseline` metres along +x of the left one, so
/// left-frame points map into the right frame by a translation of
/// `-baseline` and vice versa. Returns the sum of the two directional means.
pub fn photometric_lr(
    left: &ImageRaster,
    right: &ImageRaster,
    depth_left: &DepthMap,
    depth_right: &DepthMap,
    baseline: f64,
    k: &Intrinsics,
) -> Result<f64> {
    if !(baseline >= 0.0 && baseline.is_finite()) {
        return Err(Error::invalid(format!(
            "baseline {baseline} must be non-negative"
        )));
    }
    let right_from_left = TransformSE3::from_translation(Vector3::new(-baseline, 0.0, 0.0));
    let left_from_right = TransformSE3::from_translation(Vector3::new(baseline, 0.0, 0.0));
    let l_to_r = warped_abs_mean(left, right, depth_left, &right_from_left, k)?;
    let r_to_l = warped_abs_mean(right, left, depth_right, &left_from_right, k)?;
    match (l_to_r, r_to_l) {
        (Some(a), Some(b)) => Ok(a + b),
        _ => Err(Error::invalid(
            "stereo photometric loss has no valid pixels",
        )),
    }
}

/// Forward-difference smoothness: mean `|dD/dx|` over the first `width - 1`
/// columns plus mean `|dD/dy|` over the first `height - 1` rows. A
/// difference counts only when both of its pixels are valid.
pub fn smoothness(depth: &DepthMap) -> Result<f64> {
    let (w, h) = (depth.width(), depth.height());
    if w < 2 || h < 2 {
        return Err(Error::invalid("smoothness needs at least a 2x2 depth map"));
    }
    let mut sum_x = 0.0;
    let mut n_x = 0usize;
    let mut sum_y = 0.0;
    let mut n_y = 0usize;
    for y in 0..h {
        for x in 0..w {
            let Some(d) = depth.get(x, y) else { continue };
            if x + 1 < w {
                if let Some(r) = depth.get(x + 1, y) {
                    sum_x += (r - d).abs();
                    n_x += 1;
                }
            }
            if y + 1 < h {
                if let Some(b) = depth.get(x, y + 1) {
                    sum_y += (b - d).abs();
                    n_y += 1;
                }
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(mean(sum_x, n_x) + mean(sum_y, n_y))
}

/// Inputs of the semi-supervised stereo depth loss.
#[derive(Clone, Copy, Debug)]
pub struct StereoSample<'a> {
    pub pred_left: &'a DepthMap,
    pub pred_right: &'a DepthMap,
    pub gt_left: &'a DepthMap,
    pub gt_right: &'a DepthMap,
    pub image_left: &'a ImageRaster,
    pub image_right: &'a ImageRaster,
    pub baseline: f64,
    pub intrinsics: &'a Intrinsics,
}

/// Unweighted components `(berhu_L + berhu_R, photometric_lr, smooth_L + smooth_R)`.
pub fn semisupervised_terms(s: &StereoSample<'_>) -> Result<[f64; 3]> {
    let depth_term = berhu(s.pred_left, s.gt_left)? + berhu(s.pred_right, s.gt_right)?;
    let photo = photometric_lr(
        s.image_left,
        s.image_right,
        s.pred_left,
        s.pred_right,
        s.baseline,
        s.intrinsics,
    )?;
    let smooth = smoothness(s.pred_left)? + smoothness(s.pred_right)?;
    Ok([depth_term, photo, smooth])
}

pub fn combined_semisupervised(s: &StereoSample<'_>, w: &LossWeights) -> Result<f64> {
    let [b, c, sm] = semisupervised_terms(s)?;
    Ok(w.lambda1 * b + w.lambda2 * c + w.lambda3 * sm)
}

/// Mean `|I1(u) - I2(pi(K exp(xi) pi^-1(D1(u), u)))|` over valid pixels.
pub fn pose_photometric(
    image1: &ImageRaster,
    image2: &ImageRaster,
    depth1: &DepthMap,
    xi: &MotionVector,
    k: &Intrinsics,
) -> Result<f64> {
    let t = TransformSE3::exp(xi)?;
    warped_abs_mean(image1, image2, depth1, &t, k)?
        .ok_or_else(|| Error::invalid("pose photometric loss has no valid pixels"))
}

/// `|xi - log(T_gt)|`.
pub fn pose_loss(xi: &MotionVector, t_gt: &TransformSE3) -> Result<f64> {
    Ok((*xi - t_gt.log()?).norm())
}

/// Mean flow negative log-likelihood of `pred` (flow plus info params)
/// against `gt` over jointly valid pixels, in pixel units.
pub fn flow_nll_map(pred: &FlowField, gt: &FlowField) -> Result<f64> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::ShapeMismatch("flow fields differ in size".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..pred.len() {
        let (Some(p), Some(g)) = (pred.flow_px(i), gt.flow_px(i)) else {
            continue;
        };
        let r: Vector2<f64> = p - g;
        total += flow_nll(&r, &InfoMatrix::build(&pred.info(i))?);
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("flow loss has no valid pixels"));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::info::InfoParams;
    use proptest::prelude::*;

    fn k32() -> Intrinsics {
        Intrinsics::new(40.0, 40.0, 15.5, 11.5, 32, 24).unwrap()
    }

    fn depth_from(values: &[f64]) -> DepthMap {
        DepthMap::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn berhu_examples() {
        let a = depth_from(&[1.0, 2.0, 3.0]);
        assert_eq!(berhu(&a, &a).unwrap(), 0.0);

        // |d| = {0.5, 2, 5}: c = 1, losses {0.5, 2.5, 13}
        let pred = depth_from(&[1.5, 4.0, 11.0]);
        let gt = depth_from(&[1.0, 2.0, 6.0]);
        let expected = (0.5 + (4.0 + 1.0) / 2.0 + (25.0 + 1.0) / 2.0) / 3.0;
        assert!((berhu(&pred, &gt).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 16.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn berhu_continuous_at_threshold() {
        let c = 0.7;
        assert_eq!(berhu_pixel(c, c), c);
        assert_eq!((c * c + c * c) / (2.0 * c), c);
    }

    #[test]
    fn berhu_mask_and_errors() {
        let pred = DepthMap::new(3, 1, vec![1.0, f64::NAN, 2.0]).unwrap();
        let gt = DepthMap::new(3, 1, vec![1.0, 5.0, 2.0]).unwrap();
        assert_eq!(berhu(&pred, &gt).unwrap(), 0.0);

        let empty = DepthMap::new(2, 1, vec![0.0, -1.0]).unwrap();
        let other = depth_from(&[1.0, 1.0]);
        assert!(matches!(
            berhu(&empty, &other),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            berhu(&other, &depth_from(&[1.0])),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn smoothness_examples() {
        let flat = DepthMap::constant(8, 6, 3.0).unwrap();
        assert_eq!(smoothness(&flat).unwrap(), 0.0);
        let ramp = DepthMap::from_fn(8, 6, |x, _| x as f64 + 1.0).unwrap();
        assert!((smoothness(&ramp).unwrap() - 1.0).abs() < 1e-12);
        assert!(smoothness(&DepthMap::constant(1, 5, 1.0).unwrap()).is_err());
    }

    #[test]
    fn smoothness_matches_double_loop() {
        let (w, h) = (9, 7);
        let vals: Vec<f64> = (0..w * h)
            .map(|i| 1.0 + ((i * 37 % 11) as f64) * 0.13)
            .collect();
        let d = DepthMap::new(w, h, vals.clone()).unwrap();
        let mut gx = 0.0;
        for y in 0..h {
            for x in 0..w - 1 {
                gx += (vals[y * w + x + 1] - vals[y * w + x]).abs();
            }
        }
        let mut gy = 0.0;
        for y in 0..h - 1 {
            for x in 0..w {
                gy += (vals[(y + 1) * w + x] - vals[y * w + x]).abs();
            }
        }
        let oracle = gx / ((w - 1) * h) as f64 + gy / (w * (h - 1)) as f64;
        assert!((smoothness(&d).unwrap() - oracle).abs() < 1e-12);
    }

    fn texture(x: i64, y: i64) -> f64 {
        0.5 + 0.4 * (((x * 7 + y * 13) % 17) as f64 / 17.0 - 0.5)
    }

    /// Fronto-parallel plane at depth 2 with an 80 px / m focal length: a
    /// 0.05 m baseline gives exactly 1 px disparity.
    fn stereo_fixture() -> (ImageRaster, ImageRaster, DepthMap, Intrinsics, f64) {
        let k = k32();
        let disparity = 1i64;
        let depth = DepthMap::constant(32, 24, 2.0).unwrap();
        let baseline = disparity as f64 * 2.0 / k.fx;
        let left = ImageRaster::from_fn(32, 24, |x, y| texture(x as i64, y as i64)).unwrap();
        let right =
            ImageRaster::from_fn(32, 24, |x, y| texture(x as i64 + disparity, y as i64)).unwrap();
        (left, right, depth, k, baseline)
    }

    #[test]
    fn photometric_lr_examples() {
        let (left, right, depth, k, baseline) = stereo_fixture();
        assert_eq!(
            photometric_lr(&left, &left, &depth, &depth, 0.0, &k).unwrap(),
            0.0
        );
        assert!(photometric_lr(&left, &right, &depth, &depth, baseline, &k).unwrap() < 1e-6);
        assert!(photometric_lr(&left, &right, &depth, &depth, 0.0, &k).unwrap() > 1e-3);

        let flat = ImageRaster::from_fn(32, 24, |_, _| 0.3).unwrap();
        assert!(photometric_lr(&flat, &flat, &depth, &depth, 0.2, &k).unwrap() < 1e-15);
        assert!(photometric_lr(&flat, &flat, &depth, &depth, -0.1, &k).is_err());
    }

    #[test]
    fn photometric_lr_without_valid_pixels() {
        let (left, right, _, k, _) = stereo_fixture();
        let none = DepthMap::constant(32, 24, -1.0).unwrap();
        assert!(matches!(
            photometric_lr(&left, &right, &none, &none, 0.1, &k),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn combined_examples() {
        let (left, right, depth, k, baseline) = stereo_fixture();
        let sample = StereoSample {
            pred_left: &depth,
            pred_right: &depth,
            gt_left: &depth,
            gt_right: &depth,
            image_left: &left,
            image_right: &right,
            baseline,
            intrinsics: &k,
        };
        assert!(combined_semisupervised(&sample, &LossWeights::default()).unwrap() < 1e-6);

        let ramp =
            DepthMap::from_fn(32, 24, |x, y| 2.0 + 0.01 * x as f64 + 0.02 * y as f64).unwrap();
        let gt = DepthMap::constant(32, 24, 2.1).unwrap();
        let sample = StereoSample {
            pred_left: &ramp,
            pred_right: &depth,
            gt_left: &gt,
            gt_right: &gt,
            ..sample
        };
        let only_smooth =
            combined_semisupervised(&sample, &LossWeights::new(0.0, 0.0, 1.0).unwrap()).unwrap();
        assert!(
            (only_smooth - (smoothness(&ramp).unwrap() + smoothness(&depth).unwrap())).abs()
                < 1e-12
        );

        let w = LossWeights::default();
        let composed = w.lambda1 * (berhu(&ramp, &gt).unwrap() + berhu(&depth, &gt).unwrap())
            + w.lambda2 * photometric_lr(&left, &right, &ramp, &depth, baseline, &k).unwrap()
            + w.lambda3 * (smoothness(&ramp).unwrap() + smoothness(&depth).unwrap());
        assert!((combined_semisupervised(&sample, &w).unwrap() - composed).abs() < 1e-12);

        // Superposition in the weights.
        let a = LossWeights::new(0.3, 1.7, 0.2).unwrap();
        let b = LossWeights::new(1.1, 0.4, 2.5).unwrap();
        let sum = LossWeights::new(1.4, 2.1, 2.7).unwrap();
        let lhs = combined_semisupervised(&sample, &sum).unwrap();
        let rhs = combined_semisupervised(&sample, &a).unwrap()
            + combined_semisupervised(&sample, &b).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn default_weights() {
        let w = LossWeights::default();
        assert_eq!((w.lambda1, w.lambda2), (2.0, 1.0));
        assert_eq!(w.lambda3, (-4.0f64).exp());
        assert!(LossWeights::new(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn pose_photometric_zero_motion() {
        let k = k32();
        let img = ImageRaster::from_fn(32, 24, |x, y| texture(x as i64, y as i64)).unwrap();
        let depth = DepthMap::constant(32, 24, 2.0).unwrap();
        assert_eq!(
            pose_photometric(&img, &img, &depth, &MotionVector::zero(), &k).unwrap(),
            0.0
        );
        let none = DepthMap::constant(32, 24, 0.0).unwrap();
        assert!(pose_photometric(&img, &img, &none, &MotionVector::zero(), &k).is_err());
    }

    #[test]
    fn pose_loss_examples() {
        let xi = MotionVector::new([0.02, -0.01, 0.03, 0.01, -0.02, 0.015]);
        let t = TransformSE3::exp(&xi).unwrap();
        assert!(pose_loss(&xi, &t).unwrap() < 1e-12);
        let eps = 0.003;
        let shifted = xi + MotionVector::new([eps, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((pose_loss(&shifted, &t).unwrap() - eps).abs() < 1e-12);

        let other = MotionVector::new([0.1, 0.2, -0.3, 0.05, 0.0, -0.1]);
        let d = other - t.log().unwrap();
        let direct = (0..6).map(|i| d[i] * d[i]).sum::<f64>().sqrt();
        assert!((pose_loss(&other, &t).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn flow_nll_map_against_pixel_oracle() {
        let mut pred = FlowField::zeros(3, 1);
        let gt = FlowField::zeros(3, 1);
        pred.set_flow(0, Vector2::new(1.0, 0.0));
        pred.set_flow(1, Vector2::new(1.0, 1.0));
        pred.set_info(1, InfoParams::new(1.0, 1.0, 1.0));
        pred.invalidate(2);
        let m = InfoMatrix::build(&InfoParams::new(1.0, 1.0, 1.0)).unwrap();
        let expected = 0.5 * (0.5 + flow_nll(&Vector2::new(1.0, 1.0), &m));
        assert!((flow_nll_map(&pred, &gt).unwrap() - expected).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn berhu_monotone_in_magnitude(c in 0.01f64..5.0, a in 0.0f64..20.0, b in 0.0f64..20.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(berhu_pixel(lo, c) <= berhu_pixel(hi, c));
            prop_assert!(berhu_pixel(-hi, c) == berhu_pixel(hi, c));
            prop_assert!(berhu_pixel(hi, c) >= 0.0);
        }

        #[test]
        fn berhu_is_non_negative(vals in prop::collection::vec((0.1f64..10.0, 0.1f64..10.0), 1..40)) {
            let (p, g): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
            prop_assert!(berhu(&depth_from(&p), &depth_from(&g)).unwrap() >= 0.0);
        }
    }
}
