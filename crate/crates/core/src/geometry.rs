//! Rigid-body primitives: rotations, poses, the 6D rotation parameterization,
//! rotation distances and chordal averaging.
//!
//! Rotations are stored as 3x3 row-major matrices. Quaternions only appear as
//! a compact storage format (`w >= 0`).

use alloc::vec::Vec;
use core::ops::Mul;

use nalgebra::Matrix3;
use thiserror::Error;

use crate::math;

/// Norm below which a 6D block is considered degenerate.
pub const DEGENERACY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("6D rotation is degenerate: {0}")]
    Degenerate6D(&'static str),
    #[error("chordal mean is rank deficient (singular values {0:?})")]
    DegenerateMean([f64; 3]),
    #[error("cannot average an empty set of rotations")]
    EmptyMean,
    #[error("pose distance weights must be strictly positive (got t={0}, r={1})")]
    InvalidWeights(f64, f64),
    #[error("matrix is not a rotation (orthonormality error {0:e}, det {1})")]
    NotARotation(f64, f64),
}

/// A 3D rotation as a row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rotation([f64; 9]);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub const fn identity() -> Self {
        Rotation([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
    }

    /// Validates that `m` is orthonormal with unit determinant (1e-6).
    pub fn from_matrix(m: [f64; 9]) -> Result<Self, GeometryError> {
        let r = Rotation(m);
        let err = r.orthonormality_error();
        let det = r.determinant();
        if !(err <= 1e-6) || !((det - 1.0).abs() <= 1e-6) {
            return Err(GeometryError::NotARotation(err, det));
        }
        Ok(r)
    }

    /// Builds a rotation from three column vectors without validation.
    pub(crate) fn from_columns(c0: [f64; 3], c1: [f64; 3], c2: [f64; 3]) -> Self {
        Rotation([c0[0], c1[0], c2[0], c0[1], c1[1], c2[1], c0[2], c1[2], c2[2]])
    }

    /// Rotation by `angle` radians about the unit `axis` (Rodrigues).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = norm3(&axis);
        let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
        let (s, c) = (math::sin(angle), math::cos(angle));
        let t = 1.0 - c;
        Rotation([
            t * x * x + c,
            t * x * y - s * z,
            t * x * z + s * y,
            t * x * y + s * z,
            t * y * y + c,
            t * y * z - s * x,
            t * x * z - s * y,
            t * y * z + s * x,
            t * z * z + c,
        ])
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = (math::sin(angle), math::cos(angle));
        Rotation([1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c])
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = (math::sin(angle), math::cos(angle));
        Rotation([c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0])
    }

    pub fn as_array(&self) -> &[f64; 9] {
        &self.0
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.0[3 * row + col]
    }

    pub fn column(&self, col: usize) -> [f64; 3] {
        [self.0[col], self.0[3 + col], self.0[6 + col]]
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Rotation([m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]])
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
            m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
        ]
    }

    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[4] + self.0[8]
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    /// `max |RᵀR − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let ci = self.column(i);
                let cj = self.column(j);
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot3(&ci, &cj) - target).abs());
            }
        }
        worst
    }

    /// Unit quaternion `(w, x, y, z)` with `w >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let m = |r, c| self.at(r, c);
        let tr = self.trace();
        let q = if tr > 0.0 {
            let s = math::sqrt(tr + 1.0) * 2.0;
            [
                0.25 * s,
                (m(2, 1) - m(1, 2)) / s,
                (m(0, 2) - m(2, 0)) / s,
                (m(1, 0) - m(0, 1)) / s,
            ]
        } else if m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2) {
            let s = math::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
            [
                (m(2, 1) - m(1, 2)) / s,
                0.25 * s,
                (m(0, 1) + m(1, 0)) / s,
                (m(0, 2) + m(2, 0)) / s,
            ]
        } else if m(1, 1) > m(2, 2) {
            let s = math::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
            [
                (m(0, 2) - m(2, 0)) / s,
                (m(0, 1) + m(1, 0)) / s,
                0.25 * s,
                (m(1, 2) + m(2, 1)) / s,
            ]
        } else {
            let s = math::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
            [
                (m(1, 0) - m(0, 1)) / s,
                (m(0, 2) + m(2, 0)) / s,
                (m(1, 2) + m(2, 1)) / s,
                0.25 * s,
            ]
        };
        let n = math::sqrt(q.iter().map(|v| v * v).sum());
        let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
        [sign * q[0] / n, sign * q[1] / n, sign * q[2] / n, sign * q[3] / n]
    }

    /// Rotation from a (not necessarily normalized) quaternion `(w, x, y, z)`.
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let n = math::sqrt(q.iter().map(|v| v * v).sum());
        let [w, x, y, z] = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
        Rotation([
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ])
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        let (a, b) = (&self.0, &rhs.0);
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[3 * r + c] = a[3 * r] * b[c] + a[3 * r + 1] * b[3 + c] + a[3 * r + 2] * b[6 + c];
            }
        }
        Rotation(out)
    }
}

/// A camera pose: camera-to-world rotation and camera centre in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pose {
    pub translation: [f64; 3],
    pub rotation: Rotation,
}

impl Pose {
    pub fn new(translation: [f64; 3], rotation: Rotation) -> Self {
        Pose { translation, rotation }
    }

    pub fn is_finite(&self) -> bool {
        self.translation
            .iter()
            .chain(self.rotation.0.iter())
            .all(|v| v.is_finite())
    }

    /// Left-multiplies by a world-frame rotation: `(g t, g R)`.
    pub fn rotated_by(&self, g: &Rotation) -> Pose {
        Pose {
            translation: g.apply(self.translation),
            rotation: *g * self.rotation,
        }
    }
}

/// Six raw numbers encoding a rotation as two (unnormalized) column vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation6D(pub [f64; 6]);

impl Rotation6D {
    /// The 6D encoding of `r`: its first two columns.
    pub fn from_rotation(r: &Rotation) -> Self {
        let (a, b) = (r.column(0), r.column(1));
        Rotation6D([a[0], a[1], a[2], b[0], b[1], b[2]])
    }
}

/// Weights of the translation and rotation terms of the pose distance.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PoseDistanceWeights {
    pub translation: f64,
    pub rotation: f64,
}

impl PoseDistanceWeights {
    pub fn new(translation: f64, rotation: f64) -> Result<Self, GeometryError> {
        let w = PoseDistanceWeights { translation, rotation };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.translation > 0.0 && self.rotation > 0.0 {
            Ok(())
        } else {
            Err(GeometryError::InvalidWeights(self.translation, self.rotation))
        }
    }
}

impl Default for PoseDistanceWeights {
    fn default() -> Self {
        PoseDistanceWeights {
            translation: 5.0,
            rotation: 2.0,
        }
    }
}

#[inline]
pub(crate) fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn norm3(a: &[f64; 3]) -> f64 {
    math::sqrt(dot3(a, a))
}

/// Intermediate values of the Gram-Schmidt recovery, kept for the backward pass.
#[derive(Debug, Clone, Copy)]
pub struct GramSchmidt {
    pub rotation: Rotation,
    u_norm: f64,
    w_norm: f64,
    a1: [f64; 3],
    a2: [f64; 3],
    v: [f64; 3],
}

impl GramSchmidt {
    pub fn new(r: &Rotation6D) -> Result<Self, GeometryError> {
        let u = [r.0[0], r.0[1], r.0[2]];
        let v = [r.0[3], r.0[4], r.0[5]];
        let u_norm = norm3(&u);
        if !(u_norm >= DEGENERACY_EPS) {
            return Err(GeometryError::Degenerate6D("first vector is zero"));
        }
        let v_norm = norm3(&v);
        if !(v_norm >= DEGENERACY_EPS) {
            return Err(GeometryError::Degenerate6D("second vector is zero"));
        }
        let a1 = [u[0] / u_norm, u[1] / u_norm, u[2] / u_norm];
        let s = dot3(&a1, &v);
        let w = [v[0] - s * a1[0], v[1] - s * a1[1], v[2] - s * a1[2]];
        let w_norm = norm3(&w);
        if !(w_norm > DEGENERACY_EPS * v_norm) {
            return Err(GeometryError::Degenerate6D("vectors are parallel"));
        }
        let a2 = [w[0] / w_norm, w[1] / w_norm, w[2] / w_norm];
        let a3 = cross3(&a1, &a2);
        Ok(GramSchmidt {
            rotation: Rotation::from_columns(a1, a2, a3),
            u_norm,
            w_norm,
            a1,
            a2,
            v,
        })
    }

    /// Pulls a gradient with respect to the (row-major) matrix back to the
    /// six raw inputs.
    pub fn backward(&self, d_rot: &[f64; 9]) -> [f64; 6] {
        let col = |j: usize| [d_rot[j], d_rot[3 + j], d_rot[6 + j]];
        let (mut g1, mut g2, g3) = (col(0), col(1), col(2));
        let (a1, a2) = (&self.a1, &self.a2);

        // a3 = a1 x a2
        let t1 = cross3(a2, &g3);
        let t2 = cross3(&g3, a1);
        for i in 0..3 {
            g1[i] += t1[i];
            g2[i] += t2[i];
        }

        // a2 = w / |w|
        let p2 = dot3(a2, &g2);
        let gw: [f64; 3] = core::array::from_fn(|i| (g2[i] - a2[i] * p2) / self.w_norm);

        // w = v - (a1.v) a1
        let s = dot3(a1, &self.v);
        let gwa = dot3(&gw, a1);
        let gv: [f64; 3] = core::array::from_fn(|i| gw[i] - gwa * a1[i]);
        for i in 0..3 {
            g1[i] -= gwa * self.v[i] + s * gw[i];
        }

        // a1 = u / |u|
        let p1 = dot3(a1, &g1);
        let gu: [f64; 3] = core::array::from_fn(|i| (g1[i] - a1[i] * p1) / self.u_norm);

        [gu[0], gu[1], gu[2], gv[0], gv[1], gv[2]]
    }
}

/// Recovers a rotation from its 6D representation by Gram-Schmidt
/// orthogonalization of the two blocks followed by a cross product.
pub fn rotation_from_6d(r: &Rotation6D) -> Result<Rotation, GeometryError> {
    GramSchmidt::new(r).map(|gs| gs.rotation)
}

/// Frobenius norm `‖Ra − Rb‖_F`.
pub fn chordal_distance(a: &Rotation, b: &Rotation) -> f64 {
    math::sqrt(a.0.iter().zip(b.0.iter()).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Angle of the relative rotation `Raᵀ Rb`, in `[0, π]`.
///
/// Evaluated as `atan2(sin θ, cos θ)` from the skew and trace parts of the
/// relative rotation, which stays accurate near `0` and `π` where `acos`
/// loses precision.
pub fn geodesic_angle(a: &Rotation, b: &Rotation) -> f64 {
    let rel = a.transpose() * *b;
    let cos = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sx = rel.at(2, 1) - rel.at(1, 2);
    let sy = rel.at(0, 2) - rel.at(2, 0);
    let sz = rel.at(1, 0) - rel.at(0, 1);
    let sin = 0.5 * math::sqrt(sx * sx + sy * sy + sz * sz);
    math::atan2(sin, cos)
}

/// `λ_t ‖t̂ − t‖₂ + λ_r ‖R̂ − R‖_F`.
pub fn pose_distance(a: &Pose, b: &Pose, w: &PoseDistanceWeights) -> f64 {
    let dt = [
        a.translation[0] - b.translation[0],
        a.translation[1] - b.translation[1],
        a.translation[2] - b.translation[2],
    ];
    w.translation * norm3(&dt) + w.rotation * chordal_distance(&a.rotation, &b.rotation)
}

/// Gradient of [`pose_distance`] with respect to the translation and the
/// rotation matrix of the first argument. Both norms use the zero subgradient
/// at the origin.
pub fn pose_distance_grad(pred: &Pose, truth: &Pose, w: &PoseDistanceWeights) -> ([f64; 3], [f64; 9]) {
    let dt: [f64; 3] = core::array::from_fn(|i| pred.translation[i] - truth.translation[i]);
    let nt = norm3(&dt);
    let gt = if nt > 0.0 {
        dt.map(|v| w.translation * v / nt)
    } else {
        [0.0; 3]
    };
    let dr: [f64; 9] = core::array::from_fn(|i| pred.rotation.0[i] - truth.rotation.0[i]);
    let nr = math::sqrt(dr.iter().map(|v| v * v).sum());
    let gr = if nr > 0.0 {
        dr.map(|v| w.rotation * v / nr)
    } else {
        [0.0; 9]
    };
    (gt, gr)
}

/// Relative singular-value floor below which the chordal mean is undefined.
const MEAN_RANK_TOL: f64 = 1e-10;

/// Rotation minimizing `Σ ‖R − Rᵢ‖²_F`: the arithmetic mean matrix projected
/// onto SO(3) through its SVD, with the sign of the smallest singular
/// direction fixed by the determinant.
pub fn chordal_l2_mean(rotations: &[Rotation]) -> Result<Rotation, GeometryError> {
    if rotations.is_empty() {
        return Err(GeometryError::EmptyMean);
    }
    let mut sum = [0.0; 9];
    for r in rotations {
        for (s, v) in sum.iter_mut().zip(r.0.iter()) {
            *s += v;
        }
    }
    let n = rotations.len() as f64;
    let mean = Matrix3::from_row_slice(&sum.map(|v| v / n));
    let svd = mean.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::DegenerateMean([f64::NAN; 3])),
    };
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap_or(core::cmp::Ordering::Equal));
    let sorted = [s[order[0]], s[order[1]], s[order[2]]];
    if !(sorted[1] > MEAN_RANK_TOL * sorted[0].max(f64::MIN_POSITIVE)) {
        return Err(GeometryError::DegenerateMean(sorted));
    }
    let det = (u * v_t).determinant();
    let mut diag = Matrix3::identity();
    diag[(order[2], order[2])] = if det < 0.0 { -1.0 } else { 1.0 };
    let r = u * diag * v_t;
    let mut out = [0.0; 9];
    for row in 0..3 {
        for col in 0..3 {
            out[3 * row + col] = r[(row, col)];
        }
    }
    Ok(Rotation(out))
}

/// Point estimate of a sample set: arithmetic mean of the translations and
/// chordal L2 mean of the rotations.
pub fn point_prediction(samples: &[Pose]) -> Result<Pose, GeometryError> {
    if samples.is_empty() {
        return Err(GeometryError::EmptyMean);
    }
    let n = samples.len() as f64;
    let mut t = [0.0; 3];
    for p in samples {
        for (acc, x) in t.iter_mut().zip(p.translation) {
            *acc += x;
        }
    }
    let rotations: Vec<Rotation> = samples.iter().map(|p| p.rotation).collect();
    Ok(Pose {
        translation: t.map(|v| v / n),
        rotation: chordal_l2_mean(&rotations)?,
    })
}
