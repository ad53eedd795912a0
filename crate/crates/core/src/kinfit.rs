//! Kinematic model fitting for one pair of parts.
//!
//! Each candidate model (rigid, prismatic, rotational) is fit to the
//! sequence of relative transforms by closed-form estimators, scored with a
//! Gaussian residual likelihood and penalized with BIC.
//!
//! Likelihood per frame, with translation residual `e_t` (meters) and
//! rotation residual `e_r` (radians):
//!
//! ```text
//! log N(e_t; 0, sigma_pos) + log N(e_r; 0, sigma_rot)
//! ```

use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector2};
use num_traits::Float;

use crate::geometry::{Pose, RelativeTransform, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KinFitError {
    #[error("degenerate motion: {0}")]
    DegenerateMotion(&'static str),
    #[error("observation count must be at least 1")]
    InvalidCount,
    #[error("no relative transforms to fit")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelType {
    Rigid,
    Prismatic,
    Rotational,
}

impl ModelType {
    /// In tie-break priority order.
    pub const ALL: [ModelType; 3] = [ModelType::Rigid, ModelType::Prismatic, ModelType::Rotational];

    pub fn name(self) -> &'static str {
        match self {
            ModelType::Rigid => "rigid",
            ModelType::Prismatic => "prismatic",
            ModelType::Rotational => "rotational",
        }
    }

    pub fn parse(s: &str) -> Option<ModelType> {
        ModelType::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl core::fmt::Display for ModelType {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelParams {
    Rigid {
        fixed: Pose,
    },
    /// `delta(q) = translate(axis * q) ∘ origin`, `q` in meters.
    Prismatic {
        origin: Pose,
        axis: Vec3,
        range: (f64, f64),
    },
    /// `delta(q) = rotate(axis through center, q) ∘ phase`, `q` in radians.
    /// `radius` is the distance of `phase`'s origin from the axis.
    Rotational {
        center: Vec3,
        axis: Vec3,
        radius: f64,
        phase: Pose,
        range: (f64, f64),
    },
}

impl ModelParams {
    pub fn model_type(&self) -> ModelType {
        match self {
            ModelParams::Rigid { .. } => ModelType::Rigid,
            ModelParams::Prismatic { .. } => ModelType::Prismatic,
            ModelParams::Rotational { .. } => ModelType::Rotational,
        }
    }

    /// Joint axis for prismatic and rotational models.
    pub fn axis(&self) -> Option<Vec3> {
        match self {
            ModelParams::Rigid { .. } => None,
            ModelParams::Prismatic { axis, .. } | ModelParams::Rotational { axis, .. } => Some(*axis),
        }
    }

    pub fn range(&self) -> Option<(f64, f64)> {
        match self {
            ModelParams::Rigid { .. } => None,
            ModelParams::Prismatic { range, .. } | ModelParams::Rotational { range, .. } => {
                Some(*range)
            }
        }
    }

    /// Relative transform at configuration `q`.
    pub fn predict(&self, q: f64) -> Pose {
        match self {
            ModelParams::Rigid { fixed } => *fixed,
            ModelParams::Prismatic { origin, axis, .. } => {
                Pose::from_translation(axis * q).compose(origin)
            }
            ModelParams::Rotational {
                center,
                axis,
                phase,
                ..
            } => Pose::about_line(center, axis, q).compose(phase),
        }
    }

    /// Configuration that best explains `delta` (not unwrapped).
    pub fn configuration(&self, delta: &Pose) -> f64 {
        match self {
            ModelParams::Rigid { .. } => 0.0,
            ModelParams::Prismatic { origin, axis, .. } => {
                axis.dot(&(delta.translation() - origin.translation()))
            }
            ModelParams::Rotational { axis, phase, .. } => {
                signed_angle_about(&(delta.rotation() * phase.rotation().inverse()), axis)
            }
        }
    }

    /// Translation and rotation residual of one observation.
    pub fn residual(&self, delta: &Pose) -> (f64, f64) {
        let pred = self.predict(self.configuration(delta));
        let rot = pred.angle_to(delta);
        let trans = match self {
            // Only the component orthogonal to the axis is constrained.
            ModelParams::Prismatic { axis, .. } => {
                let d = delta.translation() - pred.translation();
                (d - axis * axis.dot(&d)).norm()
            }
            _ => (delta.translation() - pred.translation()).norm(),
        };
        (trans, rot)
    }

    /// Gaussian log-likelihood (nats) of the observations under these
    /// parameters.
    pub fn log_likelihood(&self, deltas: &[RelativeTransform], noise: &NoiseModel) -> f64 {
        deltas
            .iter()
            .map(|d| {
                let (et, er) = self.residual(&d.delta);
                log_normal(et, noise.sigma_pos) + log_normal(er, noise.sigma_rot)
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Meters.
    pub sigma_pos: f64,
    /// Radians.
    pub sigma_rot: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_pos: 0.01,
            sigma_rot: 0.02,
        }
    }
}

/// Free-parameter count per model type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCounts {
    pub rigid: u32,
    pub prismatic: u32,
    pub rotational: u32,
}

impl Default for ParamCounts {
    fn default() -> Self {
        Self {
            rigid: 6,
            prismatic: 8,
            rotational: 9,
        }
    }
}

impl ParamCounts {
    pub fn get(&self, model: ModelType) -> u32 {
        match model {
            ModelType::Rigid => self.rigid,
            ModelType::Prismatic => self.prismatic,
            ModelType::Rotational => self.rotational,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelHypothesis {
    pub model: ModelType,
    /// `None` when the fit was degenerate.
    pub params: Option<ModelParams>,
    /// Nats; `-inf` for degenerate fits.
    pub log_lik: f64,
    pub k: u32,
    pub n: usize,
    pub bic: f64,
}

impl ModelHypothesis {
    pub fn is_degenerate(&self) -> bool {
        self.params.is_none()
    }
}

/// `-2 log_lik + k ln n`.
pub fn bic(log_lik: f64, k: u32, n: usize) -> Result<f64, KinFitError> {
    if n == 0 {
        return Err(KinFitError::InvalidCount);
    }
    Ok(-2.0 * log_lik + f64::from(k) * Float::ln(n as f64))
}

const LN_TAU: f64 = 1.837_877_066_409_345_5;

fn log_normal(r: f64, sigma: f64) -> f64 {
    -0.5 * LN_TAU - Float::ln(sigma) - r * r / (2.0 * sigma * sigma)
}

/// Flips `v` so its first component with magnitude above 1e-9 is positive.
pub fn canonical_axis(v: Vec3) -> Vec3 {
    match v.iter().find(|c| Float::abs(**c) > 1e-9) {
        Some(c) if *c < 0.0 => -v,
        _ => v,
    }
}

/// Chordal L2 mean of rotations: dominant eigenvector of `sum q q^T`.
pub fn chordal_mean(rotations: &[UnitQuaternion<f64>]) -> UnitQuaternion<f64> {
    let m = rotations.iter().fold(Matrix4::zeros(), |acc, q| {
        let c = q.coords;
        acc + c * c.transpose()
    });
    let eig = m.symmetric_eigen();
    let best = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let c = eig.eigenvectors.column(best).into_owned();
    UnitQuaternion::new_normalize(nalgebra::Quaternion::from(c))
}

/// Signed rotation angle of `q` about `axis`, in (-pi, pi].
pub fn signed_angle_about(q: &UnitQuaternion<f64>, axis: &Vec3) -> f64 {
    wrap_angle(2.0 * Float::atan2(q.imag().dot(axis), q.w))
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % TAU;
    if a > PI {
        a -= TAU;
    } else if a <= -PI {
        a += TAU;
    }
    a
}

/// Shifts each angle by a multiple of 2 pi to stay closest to its predecessor.
fn unwrap(angles: &mut [f64]) {
    for i in 1..angles.len() {
        let prev = angles[i - 1];
        angles[i] = prev + wrap_angle(angles[i] - prev);
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (Float::min(lo, v), Float::max(hi, v))
    })
}

fn mean_translation(deltas: &[RelativeTransform]) -> Vec3 {
    deltas.iter().fold(Vec3::zeros(), |acc, d| acc + d.delta.translation()) / deltas.len() as f64
}

fn rotations(deltas: &[RelativeTransform]) -> Vec<UnitQuaternion<f64>> {
    deltas.iter().map(|d| *d.delta.rotation()).collect()
}

fn hypothesis(
    model: ModelType,
    params: ModelParams,
    deltas: &[RelativeTransform],
    noise: &NoiseModel,
    counts: &ParamCounts,
) -> ModelHypothesis {
    let log_lik = params.log_likelihood(deltas, noise);
    let k = counts.get(model);
    let n = deltas.len();
    ModelHypothesis {
        model,
        params: Some(params),
        log_lik,
        k,
        n,
        bic: bic(log_lik, k, n).unwrap_or(f64::INFINITY),
    }
}

pub fn fit_rigid_params(deltas: &[RelativeTransform]) -> Result<ModelParams, KinFitError> {
    if deltas.is_empty() {
        return Err(KinFitError::Empty);
    }
    let fixed = Pose::from_rotation(chordal_mean(&rotations(deltas)), mean_translation(deltas));
    Ok(ModelParams::Rigid { fixed })
}

pub fn fit_prismatic_params(deltas: &[RelativeTransform]) -> Result<ModelParams, KinFitError> {
    if deltas.len() < 2 {
        return Err(KinFitError::DegenerateMotion("prismatic fit needs 2 observations"));
    }
    let mean = mean_translation(deltas);
    let cov = deltas.iter().fold(Matrix3::zeros(), |acc, d| {
        let e = d.delta.translation() - mean;
        acc + e * e.transpose()
    }) / deltas.len() as f64;
    let eig = cov.symmetric_eigen();
    let (best, lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, v)| (i, *v))
        .unwrap_or((0, 0.0));
    if !(lambda > 1e-24) {
        return Err(KinFitError::DegenerateMotion("translations do not move"));
    }
    let axis = canonical_axis(eig.eigenvectors.column(best).normalize());
    let origin_p = mean - axis * axis.dot(&mean);
    let origin = Pose::from_rotation(chordal_mean(&rotations(deltas)), origin_p);
    let range = min_max(deltas.iter().map(|d| axis.dot(&(d.delta.translation() - origin_p))));
    Ok(ModelParams::Prismatic {
        origin,
        axis,
        range,
    })
}

/// Least-squares circle through 2-D points: algebraic fit refined by
/// Gauss-Newton on the geometric distance. Returns `(center, radius)`.
pub fn fit_circle(points: &[Vector2<f64>]) -> (Vector2<f64>, f64) {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let spread = points.iter().map(|p| (p - mean).norm()).fold(0.0, Float::max);
    if spread <= 1e-12 {
        return (mean, 0.0);
    }

    // Algebraic (Kasa) fit in centered coordinates.
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vec3::zeros();
    for p in points {
        let d = p - mean;
        let row = Vec3::new(2.0 * d.x, 2.0 * d.y, 1.0);
        ata += row * row.transpose();
        atb += row * d.norm_squared();
    }
    let mut center;
    let mut radius;
    match ata.try_inverse().map(|inv| inv * atb) {
        Some(sol) if sol.iter().all(|v| v.is_finite()) => {
            center = Vector2::new(sol.x, sol.y);
            radius = Float::sqrt(Float::max(sol.z + center.norm_squared(), 0.0));
        }
        _ => return (mean, 0.0),
    }

    let cost = |c: &Vector2<f64>, r: f64| {
        points
            .iter()
            .map(|p| {
                let e = (p - mean - c).norm() - r;
                e * e
            })
            .sum::<f64>()
    };
    let mut best = cost(&center, radius);
    for _ in 0..50 {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vec3::zeros();
        for p in points {
            let d = p - mean - center;
            let dist = d.norm();
            if dist <= f64::MIN_POSITIVE {
                continue;
            }
            let j = Vec3::new(-d.x / dist, -d.y / dist, -1.0);
            let r = dist - radius;
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let Some(step) = jtj.try_inverse().map(|inv| -(inv * jtr)) else {
            break;
        };
        let c2 = center + Vector2::new(step.x, step.y);
        let r2 = radius + step.z;
        let new = cost(&c2, r2);
        if !(new < best) || r2 < 0.0 {
            break;
        }
        let done = best - new <= 1e-15 * best;
        center = c2;
        radius = r2;
        best = new;
        if done {
            break;
        }
    }
    (mean + center, radius)
}

fn plane_basis(axis: &Vec3) -> (Vec3, Vec3) {
    let helper = if Float::abs(axis.x) < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = axis.cross(&helper).normalize();
    let v = axis.cross(&u);
    (u, v)
}

pub fn fit_rotational_params(deltas: &[RelativeTransform]) -> Result<ModelParams, KinFitError> {
    if deltas.len() < 3 {
        return Err(KinFitError::DegenerateMotion("rotational fit needs 3 observations"));
    }
    let first_inv = deltas[0].delta.rotation().inverse();
    let rotvecs: Vec<Vec3> = deltas
        .iter()
        .map(|d| (d.delta.rotation() * first_inv).scaled_axis())
        .collect();
    let reference = rotvecs
        .iter()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .copied()
        .unwrap_or_else(Vec3::zeros);
    if reference.norm() <= 1e-6 {
        return Err(KinFitError::DegenerateMotion("relative rotation below 1e-6 rad"));
    }
    // Angle-weighted mean axis; back-and-forth motion is sign-aligned first.
    let summed = rotvecs.iter().fold(Vec3::zeros(), |acc, v| {
        if v.dot(&reference) < 0.0 {
            acc - v
        } else {
            acc + v
        }
    });
    let axis = canonical_axis(summed.normalize());

    let (u, v) = plane_basis(&axis);
    let translations: Vec<Vec3> = deltas.iter().map(|d| *d.delta.translation()).collect();
    let planar: Vec<Vector2<f64>> = translations
        .iter()
        .map(|t| Vector2::new(u.dot(t), v.dot(t)))
        .collect();
    let (c2, radius) = fit_circle(&planar);
    let height = translations.iter().map(|t| axis.dot(t)).sum::<f64>() / translations.len() as f64;
    let center = u * c2.x + v * c2.y + axis * height;

    let mut q: Vec<f64> = deltas
        .iter()
        .map(|d| signed_angle_about(&(d.delta.rotation() * first_inv), &axis))
        .collect();
    unwrap(&mut q);

    let back: Vec<UnitQuaternion<f64>> = deltas
        .iter()
        .zip(&q)
        .map(|(d, qi)| {
            UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_unchecked(axis), -qi) * d.delta.rotation()
        })
        .collect();
    let phase_rot = chordal_mean(&back);
    let radial = translations.iter().zip(&q).fold(Vec3::zeros(), |acc, (t, qi)| {
        acc + Pose::from_axis_angle(&axis, -qi).rotate_vector(&(t - center))
    });
    let radial = radial - axis * axis.dot(&radial);
    let offset = if radial.norm() > 1e-12 && radius > 0.0 {
        radial.normalize() * radius
    } else {
        Vec3::zeros()
    };
    let phase = Pose::from_rotation(phase_rot, center + offset);

    let mut params = ModelParams::Rotational {
        center,
        axis,
        radius,
        phase,
        range: (0.0, 0.0),
    };
    let mut configs: Vec<f64> = deltas.iter().map(|d| params.configuration(&d.delta)).collect();
    unwrap(&mut configs);
    if let ModelParams::Rotational { range, .. } = &mut params {
        *range = min_max(configs.into_iter());
    }
    Ok(params)
}

pub fn fit_rigid(
    deltas: &[RelativeTransform],
    noise: &NoiseModel,
    counts: &ParamCounts,
) -> Result<ModelHypothesis, KinFitError> {
    let p = fit_rigid_params(deltas)?;
    Ok(hypothesis(ModelType::Rigid, p, deltas, noise, counts))
}

pub fn fit_prismatic(
    deltas: &[RelativeTransform],
    noise: &NoiseModel,
    counts: &ParamCounts,
) -> Result<ModelHypothesis, KinFitError> {
    let p = fit_prismatic_params(deltas)?;
    Ok(hypothesis(ModelType::Prismatic, p, deltas, noise, counts))
}

pub fn fit_rotational(
    deltas: &[RelativeTransform],
    noise: &NoiseModel,
    counts: &ParamCounts,
) -> Result<ModelHypothesis, KinFitError> {
    let p = fit_rotational_params(deltas)?;
    Ok(hypothesis(ModelType::Rotational, p, deltas, noise, counts))
}

fn degenerate(model: ModelType, n: usize, counts: &ParamCounts) -> ModelHypothesis {
    let k = counts.get(model);
    ModelHypothesis {
        model,
        params: None,
        log_lik: f64::NEG_INFINITY,
        k,
        n,
        bic: bic(f64::NEG_INFINITY, k, n.max(1)).unwrap_or(f64::INFINITY),
    }
}

/// All three hypotheses, ascending by BIC; ties keep the simpler model first.
pub fn fit_all(
    deltas: &[RelativeTransform],
    noise: &NoiseModel,
    counts: &ParamCounts,
) -> Result<Vec<ModelHypothesis>, KinFitError> {
    if deltas.is_empty() {
        return Err(KinFitError::Empty);
    }
    let n = deltas.len();
    let mut out: Vec<ModelHypothesis> = ModelType::ALL
        .iter()
        .map(|m| {
            let fit = match m {
                ModelType::Rigid => fit_rigid(deltas, noise, counts),
                ModelType::Prismatic => fit_prismatic(deltas, noise, counts),
                ModelType::Rotational => fit_rotational(deltas, noise, counts),
            };
            fit.unwrap_or_else(|_| degenerate(*m, n, counts))
        })
        .collect();
    out.sort_by(|a, b| a.bic.total_cmp(&b.bic));
    Ok(out)
}
