//! SE(3) / se(3) machinery.
//!
//! Motion vectors are ordered `(v_x, v_y, v_z, w_x, w_y, w_z)`: translation
//! first, then rotation about x, y and z. That ordering is shared with the
//! generator index and with the columns of the flow Jacobian in
//! [`crate::solver`].
//!
//! Points are carried in inverse-depth homogeneous form `(u, v, 1, q)` where
//! `(u, v)` are normalised camera coordinates and `q = 1 / depth`. A rigid
//! transform acts on that 4-vector linearly; the result is rescaled so the
//! third component is one again.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector4, Vector6};

use crate::error::{Error, Result};

/// Below this rotation magnitude the Rodrigues coefficients use Taylor series.
pub const SMALL_ANGLE: f64 = 1e-6;

/// `log` refuses rotations whose angle is within this margin of pi.
pub const LOG_PI_MARGIN: f64 = 1e-6;

/// Tolerance used when validating rotation blocks.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Smallest third homogeneous component accepted after transforming a point.
pub const CHEIRALITY_EPS: f64 = 1e-12;

/// A 6-vector in se(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionVector(Vector6<f64>);

impl MotionVector {
    pub fn new(components: [f64; 6]) -> Self {
        Self(Vector6::from_row_slice(&components))
    }

    pub fn zero() -> Self {
        Self(Vector6::zeros())
    }

    pub fn from_vector(v: Vector6<f64>) -> Self {
        Self(v)
    }

    pub fn from_parts(translation: Vector3<f64>, rotation: Vector3<f64>) -> Self {
        Self(Vector6::new(
            translation.x,
            translation.y,
            translation.z,
            rotation.x,
            rotation.y,
            rotation.z,
        ))
    }

    pub fn as_vector(&self) -> &Vector6<f64> {
        &self.0
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.0[0], self.0[1], self.0[2], self.0[3], self.0[4], self.0[5],
        ]
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn rotation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    /// The 4x4 Lie-algebra matrix `sum_j xi_j G_j`.
    pub fn hat(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&skew(&self.rotation()));
        m.fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&self.translation());
        m
    }
}

impl Default for MotionVector {
    fn default() -> Self {
        Self::zero()
    }
}

impl Index<usize> for MotionVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for MotionVector {
    type Output = MotionVector;

    fn add(self, rhs: MotionVector) -> MotionVector {
        MotionVector(self.0 + rhs.0)
    }
}

impl AddAssign for MotionVector {
    fn add_assign(&mut self, rhs: MotionVector) {
        self.0 += rhs.0;
    }
}

impl Sub for MotionVector {
    type Output = MotionVector;

    fn sub(self, rhs: MotionVector) -> MotionVector {
        MotionVector(self.0 - rhs.0)
    }
}

impl Neg for MotionVector {
    type Output = MotionVector;

    fn neg(self) -> MotionVector {
        MotionVector(-self.0)
    }
}

/// Cross-product matrix of `w`.
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn vee3(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// The six constant basis matrices of se(3).
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSet([Matrix4<f64>; 6]);

impl GeneratorSet {
    pub fn get(&self, j: usize) -> &Matrix4<f64> {
        &self.0[j]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix4<f64>> {
        self.0.iter()
    }

    /// `sum_j coeffs_j G_j`.
    pub fn combine(&self, xi: &MotionVector) -> Matrix4<f64> {
        self.0
            .iter()
            .enumerate()
            .fold(Matrix4::zeros(), |acc, (j, g)| acc + g * xi[j])
    }
}

impl Index<usize> for GeneratorSet {
    type Output = Matrix4<f64>;

    fn index(&self, j: usize) -> &Matrix4<f64> {
        &self.0[j]
    }
}

pub fn generators() -> GeneratorSet {
    let mut gens = [Matrix4::zeros(); 6];
    for (axis, g) in gens.iter_mut().take(3).enumerate() {
        g[(axis, 3)] = 1.0;
    }
    for (axis, g) in gens.iter_mut().skip(3).enumerate() {
        let mut w = Vector3::zeros();
        w[axis] = 1.0;
        g.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&w));
    }
    GeneratorSet(gens)
}

/// Point in inverse-depth homogeneous coordinates `(u, v, 1, q)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseDepthPoint {
    pub u: f64,
    pub v: f64,
    pub q: f64,
}

impl InverseDepthPoint {
    pub fn new(u: f64, v: f64, q: f64) -> Self {
        Self { u, v, q }
    }

    pub fn from_depth(u: f64, v: f64, depth: f64) -> Self {
        Self {
            u,
            v,
            q: 1.0 / depth,
        }
    }

    pub fn homogeneous(&self) -> Vector4<f64> {
        Vector4::new(self.u, self.v, 1.0, self.q)
    }

    pub fn at_infinity(&self) -> bool {
        self.q == 0.0
    }
}

/// Coefficients `sin(t)/t`, `(1 - cos t)/t^2`, `(t - sin t)/t^3`.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0 - t6 / 5040.0,
            0.5 - t2 / 24.0 + t4 / 720.0 - t6 / 40320.0,
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0 - t6 / 362880.0,
        )
    } else {
        let s = theta.sin();
        // 1 - cos t = 2 sin^2(t/2) avoids cancellation just above the threshold.
        let half = (0.5 * theta).sin();
        let t2 = theta * theta;
        (
            s / theta,
            2.0 * half * half / t2,
            (theta - s) / (t2 * theta),
        )
    }
}

/// Rigid transform stored as a 4x4 homogeneous matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformSE3 {
    matrix: Matrix4<f64>,
}

impl Default for TransformSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl TransformSE3 {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix4::identity(),
        }
    }

    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let mut matrix = Matrix4::identity();
        matrix.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        matrix.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self { matrix }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::from_parts(Matrix3::identity(), translation)
    }

    /// Wraps a 4x4 matrix after checking the rotation block and bottom row.
    pub fn from_matrix(matrix: Matrix4<f64>) -> Result<Self> {
        let t = Self { matrix };
        t.validate()?;
        Ok(t)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.matrix.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("transform has non-finite entries"));
        }
        let bottom = self.matrix.fixed_view::<1, 4>(3, 0);
        if bottom[0] != 0.0 || bottom[1] != 0.0 || bottom[2] != 0.0 || bottom[3] != 1.0 {
            return Err(Error::invalid("transform bottom row is not (0, 0, 0, 1)"));
        }
        let r = self.rotation();
        let ortho = (r.transpose() * r - Matrix3::identity()).norm();
        if ortho > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!(
                "rotation block is not orthonormal (|R^T R - I| = {ortho:e})"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!("rotation determinant is {det}")));
        }
        Ok(())
    }

    /// Matrix exponential of `sum_j xi_j G_j` in closed form.
    pub fn exp(xi: &MotionVector) -> Result<Self> {
        if !xi.is_finite() {
            return Err(Error::invalid("motion vector has non-finite components"));
        }
        let w = xi.rotation();
        let theta = w.norm();
        let (a, b, c) = rodrigues_coefficients(theta);
        let wx = skew(&w);
        let wx2 = wx * wx;
        let rotation = Matrix3::identity() + wx * a + wx2 * b;
        let v = Matrix3::identity() + wx * b + wx2 * c;
        Ok(Self::from_parts(rotation, v * xi.translation()))
    }

    /// Inverse of [`TransformSE3::exp`] for rotation angles below `pi - 1e-6`.
    pub fn log(&self) -> Result<MotionVector> {
        let r = self.rotation();
        let cos = 0.5 * (r.trace() - 1.0);
        let sin_axis = 0.5 * vee3(&(r - r.transpose()));
        let sin = sin_axis.norm();
        let theta = sin.atan2(cos);
        if theta >= PI - LOG_PI_MARGIN {
            return Err(Error::Domain { angle: theta });
        }
        let t2 = theta * theta;
        let w = if theta < 1e-4 {
            sin_axis * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0)
        } else {
            sin_axis * (theta / sin)
        };
        let wx = skew(&w);
        let d = if theta < 1e-2 {
            1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
        } else {
            let half = (0.5 * theta).sin();
            (1.0 - theta * sin / (4.0 * half * half)) / t2
        };
        let v_inv = Matrix3::identity() - wx * 0.5 + wx * wx * d;
        Ok(MotionVector::from_parts(v_inv * self.translation(), w))
    }

    pub fn compose(&self, other: &TransformSE3) -> TransformSE3 {
        let mut matrix = self.matrix * other.matrix;
        matrix
            .fixed_view_mut::<1, 4>(3, 0)
            .copy_from_slice(&[0.0, 0.0, 0.0, 1.0]);
        TransformSE3 { matrix }
    }

    pub fn inverse(&self) -> TransformSE3 {
        let rt = self.rotation().transpose();
        TransformSE3::from_parts(rt, -(rt * self.translation()))
    }

    /// Rotation angle in radians. The cosine comes from the trace (clamped to
    /// [-1, 1]) and the sine from the skew part, so tiny angles keep full precision.
    pub fn rotation_angle(&self) -> f64 {
        let r = self.rotation();
        let cos = (0.5 * (r.trace() - 1.0)).clamp(-1.0, 1.0);
        let sin = 0.5
            * Vector3::new(
                r[(2, 1)] - r[(1, 2)],
                r[(0, 2)] - r[(2, 0)],
                r[(1, 0)] - r[(0, 1)],
            )
            .norm();
        sin.atan2(cos)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    /// Acts on an inverse-depth point and renormalises the third component to one.
    pub fn apply(&self, p: &InverseDepthPoint) -> Result<InverseDepthPoint> {
        let h = self.matrix * p.homogeneous();
        let z = h[2];
        if !(z > CHEIRALITY_EPS) {
            return Err(Error::Cheirality { depth: z });
        }
        Ok(InverseDepthPoint::new(h[0] / z, h[1] / z, h[3] / z))
    }
}

impl Mul for TransformSE3 {
    type Output = TransformSE3;

    fn mul(self, rhs: TransformSE3) -> TransformSE3 {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a TransformSE3> for &'a TransformSE3 {
    type Output = TransformSE3;

    fn mul(self, rhs: &'a TransformSE3) -> TransformSE3 {
        self.compose(rhs)
    }
}

/// Left Jacobian of the additive parametrisation:
/// `exp(xi + d) ~= exp(J d) * exp(xi)` to first order in `d`.
pub fn left_jacobian(xi: &MotionVector) -> Matrix6<f64> {
    let rho = skew(&xi.translation());
    let phi = skew(&xi.rotation());
    let theta = xi.rotation().norm();
    let t2 = theta * theta;

    let (_, b, c) = rodrigues_coefficients(theta);
    let jl = Matrix3::identity() + phi * b + phi * phi * c;

    let (c2, c3) = if theta < 1e-2 {
        (
            1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0,
            1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0,
        )
    } else {
        let (s, co) = theta.sin_cos();
        (
            (t2 + 2.0 * co - 2.0) / (2.0 * t2 * t2),
            (2.0 * theta - 3.0 * s + theta * co) / (2.0 * t2 * t2 * theta),
        )
    };
    let pr = phi * rho;
    let rp = rho * phi;
    let prp = pr * phi;
    let q = rho * 0.5
        + (pr + rp + prp) * c
        + (phi * pr + rp * phi - prp * 3.0) * c2
        + (prp * phi + phi * prp) * c3;

    let mut j = Matrix6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&jl);
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&q);
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(&jl);
    j
}
