//! Rigid-body poses in SE(3), least-squares point-set alignment and a
//! RANSAC wrapper around it.

use alloc::vec::Vec;
use core::ops::Mul;

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use num_traits::Float;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("no consensus: best inlier set has {best} correspondences, need 3")]
    NoConsensus { best: usize },
    #[error("point sets differ in length ({src} vs {dst})")]
    LengthMismatch { src: usize, dst: usize },
}

/// Rigid transform `x -> R x + t`. The rotation is stored as a unit
/// quaternion with a non-negative scalar part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose from raw quaternion components `(w, x, y, z)`.
    ///
    /// The quaternion is renormalized unless it is already unit to within a
    /// few ulps, so that re-reading a serialized pose reproduces it exactly.
    pub fn from_wxyz(wxyz: [f64; 4], translation: Vec3) -> Self {
        Self::from_quaternion(
            Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]),
            translation,
        )
    }

    pub fn from_quaternion(q: Quaternion<f64>, translation: Vec3) -> Self {
        let n2 = q.norm_squared();
        let q = if Float::abs(n2 - 1.0) <= 8.0 * f64::EPSILON {
            q
        } else {
            q / Float::sqrt(n2)
        };
        Self {
            rotation: Unit::new_unchecked(canonical_sign(q)),
            translation,
        }
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self::from_quaternion(rotation.into_inner(), translation)
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation,
        }
    }

    /// Rotation by `angle` radians about the unit `axis`, no translation.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let axis = Unit::new_normalize(*axis);
        Self::from_rotation(UnitQuaternion::from_axis_angle(&axis, angle), Vec3::zeros())
    }

    /// Rotation by `angle` about the line through `point` with direction `axis`.
    pub fn about_line(point: &Vec3, axis: &Vec3, angle: f64) -> Self {
        let r = Self::from_axis_angle(axis, angle);
        Self::from_rotation(r.rotation, point - r.rotation * point)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Quaternion components as `[w, x, y, z]`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_rotation(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::from_rotation(inv, -(inv * self.translation))
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn rotate_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Rotation angle in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        quaternion_angle(&self.rotation)
    }

    /// Rotation vector (axis scaled by angle).
    pub fn rotation_vector(&self) -> Vec3 {
        self.rotation.scaled_axis()
    }

    /// Geodesic angle between the rotations of `self` and `other`.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        rotation_distance(&self.rotation, &other.rotation)
    }

    /// Translation distance plus rotation angle, both to `other`.
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        (
            (self.translation - other.translation).norm(),
            self.angle_to(other),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.wxyz().iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// Right-perturbation `self ∘ exp(xi)` with `xi = (v, w)`; translation
    /// part first.
    pub fn retract(&self, xi: &[f64; 6]) -> Pose {
        let delta = Pose::from_rotation(
            UnitQuaternion::from_scaled_axis(Vec3::new(xi[3], xi[4], xi[5])),
            Vec3::new(xi[0], xi[1], xi[2]),
        );
        self.compose(&delta)
    }

    /// Inverse of `retract` around identity: `(t, rotation vector)`.
    pub fn log6(&self) -> [f64; 6] {
        let w = self.rotation_vector();
        let t = self.translation;
        [t.x, t.y, t.z, w.x, w.y, w.z]
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a Pose> for &'a Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

fn canonical_sign(q: Quaternion<f64>) -> Quaternion<f64> {
    let c = [q.w, q.i, q.j, q.k];
    match c.iter().find(|v| **v != 0.0) {
        Some(v) if *v < 0.0 => -q,
        _ => q,
    }
}

fn quaternion_angle(q: &UnitQuaternion<f64>) -> f64 {
    let q = q.quaternion();
    2.0 * Float::atan2(q.imag().norm(), Float::abs(q.w))
}

/// Geodesic angle of `R_a^T R_b`.
pub fn rotation_distance(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    quaternion_angle(&(a.inverse() * b))
}

/// A pose observed at an integer frame index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeTransform {
    pub t: i64,
    pub delta: Pose,
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    let sum = points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
    sum / points.len() as f64
}

/// Scatter matrix of points about their centroid.
fn scatter(points: &[Vec3], c: &Vec3) -> Matrix3<f64> {
    points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - c;
        acc + d * d.transpose()
    })
}

/// True when the points span less than a plane (all coincident or collinear).
pub fn is_collinear(points: &[Vec3]) -> bool {
    if points.len() < 3 {
        return true;
    }
    let c = centroid(points);
    let mut ev: Vec<f64> = scatter(points, &c)
        .symmetric_eigenvalues()
        .iter()
        .map(|v| Float::max(*v, 0.0))
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev[0] <= f64::MIN_POSITIVE || ev[1] <= 1e-18 * ev[0]
}

/// Least-squares rigid transform mapping `src` onto `dst` (Kabsch).
pub fn align_point_sets(src: &[Vec3], dst: &[Vec3]) -> Result<Pose, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::LengthMismatch {
            src: src.len(),
            dst: dst.len(),
        });
    }
    if src.len() < 3 {
        return Err(GeometryError::DegenerateGeometry("fewer than 3 correspondences"));
    }
    if is_collinear(src) || is_collinear(dst) {
        return Err(GeometryError::DegenerateGeometry("points are collinear"));
    }
    let cs = centroid(src);
    let cd = centroid(dst);
    let h = src.iter().zip(dst).fold(Matrix3::zeros(), |acc, (s, d)| {
        acc + (s - cs) * (d - cd).transpose()
    });
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::DegenerateGeometry("SVD did not converge")),
    };
    let v = v_t.transpose();
    let d = if (v * u.transpose()).determinant() < 0.0 {
        -1.0
    } else {
        1.0
    };
    let r = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    let rot = UnitQuaternion::from_matrix(&r);
    let t = cd - rot * cs;
    Ok(Pose::from_rotation(rot, t))
}

/// Root-mean-square residual of `pose` mapping `src` to `dst`.
pub fn rms_residual(pose: &Pose, src: &[Vec3], dst: &[Vec3]) -> f64 {
    if src.is_empty() {
        return 0.0;
    }
    let ss: f64 = src
        .iter()
        .zip(dst)
        .map(|(s, d)| (d - pose.transform_point(s)).norm_squared())
        .sum();
    Float::sqrt(ss / src.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Maximum point residual, meters, for a correspondence to count as an inlier.
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            inlier_threshold: 0.02,
            seed: 0,
        }
    }
}

fn inlier_mask(pose: &Pose, src: &[Vec3], dst: &[Vec3], threshold: f64) -> (Vec<bool>, usize, f64) {
    let mut count = 0;
    let mut err = 0.0;
    let mask = src
        .iter()
        .zip(dst)
        .map(|(s, d)| {
            let r = (d - pose.transform_point(s)).norm();
            let inlier = r <= threshold;
            if inlier {
                count += 1;
                err += r * r;
            }
            inlier
        })
        .collect();
    (mask, count, err)
}

fn select(points: &[Vec3], mask: &[bool]) -> Vec<Vec3> {
    points
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(p, _)| *p)
        .collect()
}

/// RANSAC over minimal 3-point samples; every improvement of the consensus
/// set is refit by [`align_point_sets`] on all of its inliers.
pub fn ransac_align(
    src: &[Vec3],
    dst: &[Vec3],
    config: &RansacConfig,
) -> Result<(Pose, Vec<bool>), GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::LengthMismatch {
            src: src.len(),
            dst: dst.len(),
        });
    }
    let n = src.len();
    if n < 3 {
        return Err(GeometryError::NoConsensus { best: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(Pose, Vec<bool>, usize, f64)> = None;

    for _ in 0..config.iterations.max(1) {
        let sample = index::sample(&mut rng, n, 3);
        let s: Vec<Vec3> = sample.iter().map(|i| src[i]).collect();
        let d: Vec<Vec3> = sample.iter().map(|i| dst[i]).collect();
        let Ok(hyp) = align_point_sets(&s, &d) else {
            continue;
        };
        let (mask, count, err) = inlier_mask(&hyp, src, dst, config.inlier_threshold);
        let improves = match &best {
            None => true,
            Some((_, _, bc, be)) => count > *bc || (count == *bc && err < *be),
        };
        if !improves || count < 3 {
            continue;
        }
        let refit = align_point_sets(&select(src, &mask), &select(dst, &mask)).unwrap_or(hyp);
        let (rmask, rcount, rerr) = inlier_mask(&refit, src, dst, config.inlier_threshold);
        let candidate = if rcount >= count {
            (refit, rmask, rcount, rerr)
        } else {
            (hyp, mask, count, err)
        };
        let all = candidate.2 == n;
        best = Some(candidate);
        if all {
            break;
        }
    }

    match best {
        Some((pose, mask, count, _)) if count >= 3 => {
            // Final refit on the consensus set so the result does not depend
            // on which sample first reached it.
            let pose = align_point_sets(&select(src, &mask), &select(dst, &mask)).unwrap_or(pose);
            Ok((pose, mask))
        }
        Some((_, _, count, _)) => Err(GeometryError::NoConsensus { best: count }),
        None => Err(GeometryError::NoConsensus { best: 0 }),
    }
}
