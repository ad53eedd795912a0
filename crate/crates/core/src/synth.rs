//! Synthetic articulated objects with known kinematic graphs.
//!
//! Parts are posed by forward kinematics from the root (part 0) through the
//! joint tree. Feature tracks sample each part's anchors with Gaussian noise;
//! pose trajectories are the per-part rigid alignments of those samples.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{align_point_sets, centroid, Pose, Vec3};
use crate::kinfit::{canonical_axis, ModelParams};
use crate::structure::{GraphEdge, KinematicGraph};
use crate::track::{FeatureTrack, PartId, PartLabelMap, PoseTrajectory, TrackFrame, TrackId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("joint {joint}: q = {q} at frame {t} outside range [{lo}, {hi}]")]
    RangeViolation { joint: usize, t: i64, q: f64, lo: f64, hi: f64 },
    #[error("joint {joint}: {reason}")]
    BadJoint { joint: usize, reason: &'static str },
    #[error("part {part}: {reason}")]
    BadPart { part: usize, reason: &'static str },
    #[error("joints do not form a spanning tree rooted at part 0")]
    NotATree,
    #[error("noise must be finite and non-negative")]
    BadNoise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartSpec {
    pub label: String,
    /// Anchor points in the part frame, with optional unit normals.
    pub anchors: Vec<(Vec3, Option<Vec3>)>,
}

impl PartSpec {
    /// Anchors on an axis-aligned box: 8 corners and 6 face centers.
    pub fn cuboid(label: &str, center: Vec3, half: Vec3) -> Self {
        let mut anchors = Vec::with_capacity(14);
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    let s = Vec3::new(sx, sy, sz);
                    anchors.push((center + half.component_mul(&s), Some(s.normalize())));
                }
            }
        }
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut n = Vec3::zeros();
                n[axis] = sign;
                anchors.push((center + half.component_mul(&n), Some(n)));
            }
        }
        Self {
            label: label.to_string(),
            anchors,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JointKind {
    Rigid,
    /// Translation along `axis` (parent frame).
    Prismatic { axis: Vec3 },
    /// Rotation about the line through `pivot` along `axis` (parent frame).
    Rotational { axis: Vec3, pivot: Vec3 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub parent: usize,
    pub child: usize,
    pub kind: JointKind,
    /// Child frame in the parent frame at q = 0.
    pub rest: Pose,
    pub range: (f64, f64),
    /// Keyframes `(t, q)`, linearly interpolated and held at the ends.
    pub profile: Vec<(i64, f64)>,
}

impl JointSpec {
    pub fn q(&self, t: i64) -> f64 {
        let p = &self.profile;
        match p.iter().position(|(k, _)| *k >= t) {
            None => p.last().map_or(0.0, |(_, q)| *q),
            Some(i) if i == 0 || p[i].0 == t => p[i].1,
            Some(i) => {
                let (t0, q0) = p[i - 1];
                let (t1, q1) = p[i];
                q0 + (q1 - q0) * (t - t0) as f64 / (t1 - t0) as f64
            }
        }
    }

    fn motion(&self, q: f64) -> Pose {
        match self.kind {
            JointKind::Rigid => Pose::identity(),
            JointKind::Prismatic { axis } => Pose::from_translation(axis.normalize() * q),
            JointKind::Rotational { axis, pivot } => Pose::about_line(&pivot, &axis.normalize(), q),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub name: String,
    pub parts: Vec<PartSpec>,
    pub joints: Vec<JointSpec>,
    pub frames: usize,
    /// Feature-point noise standard deviation, meters.
    pub noise: f64,
    pub seed: u64,
    /// Extra random-walk tracks that belong to no part.
    pub outlier_tracks: usize,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(SpecError::BadNoise);
        }
        for (k, p) in self.parts.iter().enumerate() {
            if p.anchors.len() < 4 {
                return Err(SpecError::BadPart { part: k, reason: "fewer than 4 anchors" });
            }
        }
        if self.parts.is_empty() || self.joints.len() + 1 != self.parts.len() {
            return Err(SpecError::NotATree);
        }
        let mut has_parent = vec![false; self.parts.len()];
        for (k, j) in self.joints.iter().enumerate() {
            if j.parent >= j.child || j.child >= self.parts.len() {
                return Err(SpecError::BadJoint { joint: k, reason: "parent must precede child" });
            }
            if core::mem::replace(&mut has_parent[j.child], true) {
                return Err(SpecError::NotATree);
            }
            if !(j.range.0 <= j.range.1) {
                return Err(SpecError::BadJoint { joint: k, reason: "empty range" });
            }
            if j.profile.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(SpecError::BadJoint { joint: k, reason: "profile frames not increasing" });
            }
            let axis = match j.kind {
                JointKind::Rigid => None,
                JointKind::Prismatic { axis } | JointKind::Rotational { axis, .. } => Some(axis),
            };
            if axis.is_some_and(|a| !(a.norm() > 1e-12)) {
                return Err(SpecError::BadJoint { joint: k, reason: "zero axis" });
            }
            for t in 0..self.frames as i64 {
                let q = j.q(t);
                if !(q >= j.range.0 && q <= j.range.1) {
                    return Err(SpecError::RangeViolation {
                        joint: k,
                        t,
                        q,
                        lo: j.range.0,
                        hi: j.range.1,
                    });
                }
            }
        }
        Ok(())
    }

    /// World pose of every part frame at frame `t`.
    pub fn part_frames(&self, t: i64) -> Vec<Pose> {
        let mut frames = vec![Pose::identity(); self.parts.len()];
        let mut joints: Vec<&JointSpec> = self.joints.iter().collect();
        joints.sort_by_key(|j| j.child);
        for j in joints {
            frames[j.child] = frames[j.parent] * j.motion(j.q(t)) * j.rest;
        }
        frames
    }
}

/// Everything generated from a [`SceneSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub tracks: Vec<FeatureTrack>,
    /// Observed world pose of each part, starting world-aligned at its
    /// anchor centroid.
    pub poses: Vec<PoseTrajectory>,
    pub truth: KinematicGraph,
    pub labels: PartLabelMap,
    /// Generating part of each track; outlier tracks are absent.
    pub membership: BTreeMap<TrackId, PartId>,
}

/// Ground-truth joint parameters for `joint`, expressed the way estimated
/// parameters are: in the parent's observation frame (world-aligned at the
/// first frame, origin at the parent's anchor centroid).
fn truth_params(spec: &SceneSpec, joint: &JointSpec, centroids: &[Vec3], f0: &[Pose]) -> ModelParams {
    let cp = centroids[joint.parent];
    let x0 = centroids[joint.child] - cp;
    let q0 = joint.q(0);
    let frames = 0..spec.frames as i64;
    match joint.kind {
        JointKind::Rigid => ModelParams::Rigid {
            fixed: Pose::from_translation(x0),
        },
        JointKind::Prismatic { axis } => {
            let aw = f0[joint.parent].rotate_vector(&axis.normalize());
            let a = canonical_axis(aw);
            let origin = x0 - a * a.dot(&x0);
            let qs = frames.map(|t| a.dot(&(x0 + aw * (joint.q(t) - q0) - origin)));
            ModelParams::Prismatic {
                origin: Pose::from_translation(origin),
                axis: a,
                range: min_max(qs),
            }
        }
        JointKind::Rotational { axis, pivot } => {
            let aw = f0[joint.parent].rotate_vector(&axis.normalize());
            let pw = f0[joint.parent].transform_point(&pivot) - cp;
            let a = canonical_axis(aw);
            let s = a.dot(&aw).signum();
            let r = x0 - pw;
            let center = pw + a * a.dot(&r);
            let radial = r - a * a.dot(&r);
            let qs = frames.map(|t| s * (joint.q(t) - q0));
            ModelParams::Rotational {
                center,
                axis: a,
                radius: radial.norm(),
                phase: Pose::from_translation(x0),
                range: min_max(qs),
            }
        }
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

pub fn generate(spec: &SceneSpec) -> Result<SyntheticScene, SpecError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise).map_err(|_| SpecError::BadNoise)?;
    let n_frames = spec.frames as i64;

    let f0 = spec.part_frames(0);
    let world0: Vec<Vec<Vec3>> = spec
        .parts
        .iter()
        .zip(&f0)
        .map(|(p, f)| p.anchors.iter().map(|(a, _)| f.transform_point(a)).collect())
        .collect();
    let centroids: Vec<Vec3> = world0.iter().map(|w| centroid(w)).collect();

    let mut frames_by_track: Vec<Vec<TrackFrame>> = spec.parts.iter().flat_map(|p| p.anchors.iter().map(|_| Vec::new())).collect();
    let mut poses: Vec<PoseTrajectory> = (0..spec.parts.len())
        .map(|k| PoseTrajectory {
            part_id: k as PartId,
            poses: Vec::with_capacity(spec.frames),
        })
        .collect();
    let jitter = |rng: &mut ChaCha8Rng| {
        if spec.noise > 0.0 {
            Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng))
        } else {
            Vec3::zeros()
        }
    };

    for t in 0..n_frames {
        let ft = spec.part_frames(t);
        let mut track = 0;
        for (k, part) in spec.parts.iter().enumerate() {
            let mut observed = Vec::with_capacity(part.anchors.len());
            for (anchor, n) in &part.anchors {
                let point = ft[k].transform_point(anchor) + jitter(&mut rng);
                observed.push(point);
                frames_by_track[track].push(TrackFrame {
                    t,
                    point,
                    normal: n.map(|n| ft[k].rotate_vector(&n.normalize())),
                });
                track += 1;
            }
            let local: Vec<Vec3> = world0[k].iter().map(|p| p - centroids[k]).collect();
            let pose = align_point_sets(&local, &observed).unwrap_or_else(|_| {
                ft[k] * f0[k].inverse() * Pose::from_translation(centroids[k])
            });
            poses[k].poses.push((t, pose));
        }
    }

    let mut membership = BTreeMap::new();
    let mut tracks = Vec::with_capacity(frames_by_track.len() + spec.outlier_tracks);
    let mut id = 0u64;
    for (k, part) in spec.parts.iter().enumerate() {
        for _ in &part.anchors {
            membership.insert(id, k as PartId);
            id += 1;
        }
    }
    for (id, frames) in frames_by_track.into_iter().enumerate() {
        tracks.push(FeatureTrack::new(id as TrackId, frames));
    }
    let walk = Normal::new(0.0, 0.02).expect("valid sigma");
    for o in 0..spec.outlier_tracks {
        let mut p = Vec3::new(walk.sample(&mut rng), walk.sample(&mut rng), walk.sample(&mut rng)) * 25.0;
        let frames = (0..n_frames)
            .map(|t| {
                p += Vec3::new(walk.sample(&mut rng), walk.sample(&mut rng), walk.sample(&mut rng));
                TrackFrame { t, point: p, normal: None }
            })
            .collect();
        tracks.push(FeatureTrack::new(id + o as u64, frames));
    }

    let mut edges: Vec<GraphEdge> = spec
        .joints
        .iter()
        .map(|j| GraphEdge {
            i: j.parent as PartId,
            j: j.child as PartId,
            params: truth_params(spec, j, &centroids, &f0),
        })
        .collect();
    edges.sort_by_key(|e| (e.i, e.j));
    let labels: PartLabelMap = spec
        .parts
        .iter()
        .enumerate()
        .map(|(k, p)| (k as PartId, p.label.clone()))
        .collect();
    let truth = KinematicGraph {
        parts: (0..spec.parts.len() as PartId).collect(),
        labels: labels.clone(),
        edges,
    };
    Ok(SyntheticScene {
        tracks,
        poses,
        truth,
        labels,
        membership,
    })
}

fn ramp(frames: usize, start: usize, end: usize, q: f64) -> Vec<(i64, f64)> {
    let last = frames as i64 - 1;
    let (s, e) = ((start as i64).min(last), (end as i64).min(last));
    vec![(0, 0.0), (s, 0.0), (e, q), (last, q)]
        .into_iter()
        .fold(Vec::new(), |mut acc: Vec<(i64, f64)>, kf| {
            if acc.last().is_none_or(|l| l.0 < kf.0) {
                acc.push(kf);
            }
            acc
        })
}

fn joint(parent: usize, child: usize, kind: JointKind, range: (f64, f64), profile: Vec<(i64, f64)>) -> JointSpec {
    JointSpec {
        parent,
        child,
        kind,
        rest: Pose::identity(),
        range,
        profile,
    }
}

fn scene(name: &str, parts: Vec<PartSpec>, joints: Vec<JointSpec>, frames: usize) -> SceneSpec {
    SceneSpec {
        name: name.to_string(),
        parts,
        joints,
        frames,
        noise: 0.0,
        seed: 0,
        outlier_tracks: 0,
    }
}

pub const BUILTIN_FRAMES: usize = 100;

/// door, drawer, cabinet, chair and static_pair scenes, noise-free, with
/// [`BUILTIN_FRAMES`] frames.
pub fn builtin_scenes() -> Vec<SceneSpec> {
    let n = BUILTIN_FRAMES;
    let v = Vec3::new;
    vec![
        scene(
            "door",
            vec![
                PartSpec::cuboid("wall", v(-0.5, 0.3, 1.0), v(0.4, 0.1, 1.0)),
                PartSpec::cuboid("door", v(0.45, 0.0, 1.0), v(0.35, 0.02, 0.9)),
            ],
            vec![joint(
                0,
                1,
                JointKind::Rotational { axis: Vec3::z(), pivot: Vec3::zeros() },
                (0.0, FRAC_PI_2),
                ramp(n, 0, n - 1, FRAC_PI_2),
            )],
            n,
        ),
        scene(
            "drawer",
            vec![
                PartSpec::cuboid("cabinet", v(0.0, 0.0, 0.5), v(0.4, 0.3, 0.5)),
                PartSpec::cuboid("drawer", v(0.3, 0.0, 0.6), v(0.15, 0.25, 0.08)),
            ],
            vec![joint(
                0,
                1,
                JointKind::Prismatic { axis: Vec3::x() },
                (0.0, 0.35),
                vec![(0, 0.0), (60, 0.35), (n as i64 - 1, 0.2)],
            )],
            n,
        ),
        scene(
            "cabinet",
            vec![
                PartSpec::cuboid("cabinet", v(0.0, 0.0, 0.5), v(0.4, 0.3, 0.5)),
                PartSpec::cuboid("drawer", v(0.3, 0.0, 0.75), v(0.15, 0.2, 0.08)),
                PartSpec::cuboid("drawer", v(0.0, 0.2, 0.3), v(0.25, 0.12, 0.08)),
            ],
            vec![
                joint(0, 1, JointKind::Prismatic { axis: Vec3::x() }, (0.0, 0.4), ramp(n, 0, 45, 0.4)),
                joint(0, 2, JointKind::Prismatic { axis: Vec3::y() }, (0.0, 0.4), ramp(n, 50, 95, 0.4)),
            ],
            n,
        ),
        scene(
            "chair",
            vec![
                PartSpec::cuboid("base", v(0.0, 0.0, 0.2), v(0.3, 0.3, 0.2)),
                PartSpec::cuboid("column", v(0.0, 0.15, 0.5), v(0.06, 0.06, 0.12)),
                PartSpec::cuboid("seat", v(0.1, 0.0, 0.8), v(0.25, 0.25, 0.06)),
            ],
            vec![
                joint(0, 1, JointKind::Prismatic { axis: Vec3::z() }, (0.0, 0.25), ramp(n, 0, 35, 0.25)),
                joint(
                    1,
                    2,
                    JointKind::Rotational { axis: Vec3::z(), pivot: Vec3::zeros() },
                    (0.0, PI),
                    ramp(n, 40, n - 1, PI),
                ),
            ],
            n,
        ),
        scene(
            "static_pair",
            vec![
                PartSpec::cuboid("desk", v(0.0, 0.0, 0.4), v(0.6, 0.35, 0.4)),
                PartSpec::cuboid("monitor", v(0.0, 0.0, 0.3), v(0.25, 0.03, 0.18)),
            ],
            vec![JointSpec {
                rest: Pose::from_translation(v(0.0, 0.1, 0.8)),
                ..joint(0, 1, JointKind::Rigid, (0.0, 0.0), vec![(0, 0.0)])
            }],
            n,
        ),
    ]
}

pub fn builtin_scene(name: &str) -> Option<SceneSpec> {
    builtin_scenes().into_iter().find(|s| s.name == name)
}
