//! Per-cluster 6-DOF trajectories from tracked feature correspondences.
//!
//! A trajectory is chained from RANSAC alignments between successive
//! observable frames, then optionally refined as a pose graph: extra
//! constraints between frames at power-of-two strides are measured the same
//! way and all poses but the first are solved jointly by damped Gauss-Newton.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::geometry::{centroid, ransac_align, GeometryError, Pose, RansacConfig, RelativeTransform, Vec3};
use crate::track::{FeatureTrack, PartId, PoseTrajectory};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoseGraphError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("frames {from}..{to} share only {support} track(s), need 3")]
    GapTooLarge { from: i64, to: i64, support: usize },
    #[error("trajectories share {shared} frame(s), need at least 2")]
    InsufficientOverlap { shared: usize },
}

/// Motion of one cluster. `poses[k]` maps the cluster's points at the first
/// frame to their position at frame `poses[k].0`, so the first entry is the
/// identity. `anchor` is the world pose of the cluster-local frame at the
/// first frame (the feature centroid for estimated trajectories).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTrajectory {
    pub cluster: PartId,
    pub anchor: Pose,
    pub poses: Vec<(i64, Pose)>,
    /// RANSAC inlier count of each step `k -> k + 1`.
    pub inliers: Vec<usize>,
}

impl ClusterTrajectory {
    /// Wraps world poses read from a file: the first pose becomes the anchor.
    pub fn from_world_poses(traj: &PoseTrajectory) -> Self {
        let anchor = traj.poses.first().map(|(_, p)| *p).unwrap_or_default();
        let inv = anchor.inverse();
        let poses = traj
            .poses
            .iter()
            .map(|(t, p)| (*t, p.compose(&inv)))
            .collect();
        Self {
            cluster: traj.part_id,
            anchor,
            poses,
            inliers: Vec::new(),
        }
    }

    /// World pose of the cluster frame at entry `k`.
    pub fn world_pose(&self, k: usize) -> Pose {
        self.poses[k].1.compose(&self.anchor)
    }

    pub fn world_poses(&self) -> PoseTrajectory {
        PoseTrajectory {
            part_id: self.cluster,
            poses: (0..self.poses.len())
                .map(|k| (self.poses[k].0, self.world_pose(k)))
                .collect(),
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = i64> + '_ {
        self.poses.iter().map(|(t, _)| *t)
    }
}

/// Frame index -> member points observed there, keyed by track id.
type FrameTable = BTreeMap<i64, BTreeMap<u64, Vec3>>;

fn frame_table(tracks: &[&FeatureTrack]) -> FrameTable {
    let mut table: FrameTable = BTreeMap::new();
    for tr in tracks {
        for f in &tr.frames {
            table.entry(f.t).or_default().insert(tr.track_id, f.point);
        }
    }
    table.retain(|_, pts| pts.len() >= 3);
    table
}

fn correspondences(a: &BTreeMap<u64, Vec3>, b: &BTreeMap<u64, Vec3>) -> (Vec<Vec3>, Vec<Vec3>) {
    a.iter()
        .filter_map(|(id, pa)| b.get(id).map(|pb| (*pa, *pb)))
        .unzip()
}

fn step_seed(seed: u64, from: i64, to: i64) -> u64 {
    seed ^ (from as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (to as u64).rotate_left(32)
}

fn measure(
    table: &FrameTable,
    from: i64,
    to: i64,
    ransac: &RansacConfig,
) -> Result<(Pose, usize), PoseGraphError> {
    let (src, dst) = correspondences(&table[&from], &table[&to]);
    if src.len() < 3 {
        return Err(PoseGraphError::GapTooLarge {
            from,
            to,
            support: src.len(),
        });
    }
    let cfg = RansacConfig {
        seed: step_seed(ransac.seed, from, to),
        ..*ransac
    };
    let (pose, mask) = ransac_align(&src, &dst, &cfg)?;
    Ok((pose, mask.iter().filter(|m| **m).count()))
}

/// Chains successive RANSAC alignments into a trajectory. Frames where fewer
/// than three member tracks are visible are skipped.
pub fn estimate_trajectory(
    cluster: PartId,
    tracks: &[&FeatureTrack],
    ransac: &RansacConfig,
) -> Result<ClusterTrajectory, PoseGraphError> {
    if tracks.len() < 3 {
        return Err(GeometryError::DegenerateGeometry("cluster has fewer than 3 tracks").into());
    }
    let table = frame_table(tracks);
    let frames: Vec<i64> = table.keys().copied().collect();
    let Some(&first) = frames.first() else {
        return Err(GeometryError::DegenerateGeometry("no frame shows 3 member tracks").into());
    };
    let first_pts: Vec<Vec3> = table[&first].values().copied().collect();
    let anchor = Pose::from_translation(centroid(&first_pts));

    let mut poses = Vec::with_capacity(frames.len());
    let mut inliers = Vec::with_capacity(frames.len().saturating_sub(1));
    let mut current = Pose::identity();
    poses.push((first, current));
    for w in frames.windows(2) {
        let (step, count) = measure(&table, w[0], w[1], ransac)?;
        current = step.compose(&current);
        poses.push((w[1], current));
        inliers.push(count);
    }
    Ok(ClusterTrajectory {
        cluster,
        anchor,
        poses,
        inliers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub max_iterations: usize,
    /// Initial Levenberg damping.
    pub damping: f64,
    /// Longest power-of-two frame stride used for extra constraints.
    pub max_stride: usize,
    pub ransac: RansacConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            damping: 1e-3,
            max_stride: 8,
            ransac: RansacConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub trajectory: ClusterTrajectory,
    pub converged: bool,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
}

/// Relative pose constraint between entries `a < b`: `W_b ≈ z ∘ W_a` in
/// world coordinates.
#[derive(Debug, Clone, Copy)]
struct Constraint {
    a: usize,
    b: usize,
    z: Pose,
}

fn residual(wa: &Pose, wb: &Pose, z: &Pose) -> [f64; 6] {
    // Error expressed in the cluster frame at `a`.
    wa.inverse()
        .compose(&z.inverse())
        .compose(wb)
        .log6()
}

fn total_cost(world: &[Pose], constraints: &[Constraint]) -> f64 {
    constraints
        .iter()
        .map(|c| {
            residual(&world[c.a], &world[c.b], &c.z)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
        })
        .sum()
}

/// Symmetric banded matrix, lower triangle stored row by row.
#[derive(Clone)]
struct Banded {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Banded {
    fn zeros(n: usize, bw: usize) -> Self {
        let bw = bw.min(n.saturating_sub(1));
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    /// Entry `(i, j)` with `j <= i <= j + bw`.
    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * (self.bw + 1) + (i - j)]
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bw + 1) + (i - j)]
    }

    /// Solves `A x = b` by in-place banded Cholesky; `None` unless positive
    /// definite.
    fn cholesky_solve(mut self, b: &[f64]) -> Option<Vec<f64>> {
        let (n, bw) = (self.n, self.bw);
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut d = self.get(j, j);
            for k in lo..j {
                d -= self.get(j, k) * self.get(j, k);
            }
            if !(d > 0.0) {
                return None;
            }
            let d = Float::sqrt(d);
            *self.at(j, j) = d;
            for i in (j + 1)..n.min(j + bw + 1) {
                let mut v = self.get(i, j);
                for k in i.saturating_sub(bw)..j {
                    v -= self.get(i, k) * self.get(j, k);
                }
                *self.at(i, j) = v / d;
            }
        }
        let mut y = b.to_vec();
        for i in 0..n {
            for k in i.saturating_sub(bw)..i {
                y[i] -= self.get(i, k) * y[k];
            }
            y[i] /= self.get(i, i);
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n.min(i + bw + 1) {
                y[i] -= self.get(k, i) * y[k];
            }
            y[i] /= self.get(i, i);
        }
        Some(y)
    }
}

const JAC_STEP: f64 = 1e-7;

fn numeric_jacobian(wa: &Pose, wb: &Pose, z: &Pose, wrt_b: bool) -> [[f64; 6]; 6] {
    let mut jac = [[0.0; 6]; 6];
    for d in 0..6 {
        let mut xi = [0.0; 6];
        xi[d] = JAC_STEP;
        let plus;
        let minus;
        if wrt_b {
            plus = residual(wa, &wb.retract(&xi), z);
            xi[d] = -JAC_STEP;
            minus = residual(wa, &wb.retract(&xi), z);
        } else {
            plus = residual(&wa.retract(&xi), wb, z);
            xi[d] = -JAC_STEP;
            minus = residual(&wa.retract(&xi), wb, z);
        }
        for r in 0..6 {
            jac[r][d] = (plus[r] - minus[r]) / (2.0 * JAC_STEP);
        }
    }
    jac
}

fn build_constraints(
    traj: &ClusterTrajectory,
    tracks: &[&FeatureTrack],
    ransac: &RansacConfig,
    max_stride: usize,
) -> Result<Vec<Constraint>, PoseGraphError> {
    let table = frame_table(tracks);
    let n = traj.poses.len();
    let mut out = Vec::new();
    let mut stride = 1;
    while stride < n && stride <= max_stride.max(1) {
        for a in 0..(n - stride) {
            let b = a + stride;
            let (ta, tb) = (traj.poses[a].0, traj.poses[b].0);
            if !table.contains_key(&ta) || !table.contains_key(&tb) {
                continue;
            }
            match measure(&table, ta, tb, ransac) {
                Ok((z, _)) => out.push(Constraint { a, b, z }),
                // Long strides may lose support; successive steps must not.
                Err(e) if stride == 1 => return Err(e),
                Err(_) => {}
            }
        }
        stride *= 2;
    }
    Ok(out)
}

/// Batch pose-graph refinement with the first pose held fixed. The returned
/// cost never exceeds the input cost; hitting the iteration cap is reported
/// through `converged = false`, not as an error.
pub fn refine_trajectory(
    traj: &ClusterTrajectory,
    tracks: &[&FeatureTrack],
    config: &RefineConfig,
) -> Result<RefineOutcome, PoseGraphError> {
    let n = traj.poses.len();
    let unchanged = |cost: f64| RefineOutcome {
        trajectory: traj.clone(),
        converged: true,
        iterations: 0,
        initial_cost: cost,
        final_cost: cost,
    };
    if n < 2 {
        return Ok(unchanged(0.0));
    }
    let constraints = build_constraints(traj, tracks, &config.ransac, config.max_stride)?;
    let mut world: Vec<Pose> = (0..n).map(|k| traj.world_pose(k)).collect();
    let initial_cost = total_cost(&world, &constraints);
    if initial_cost <= 1e-24 {
        return Ok(unchanged(initial_cost));
    }

    let dim = 6 * (n - 1);
    let bandwidth = 6 * constraints.iter().map(|c| c.b - c.a).max().unwrap_or(1) + 5;
    let mut cost = initial_cost;
    let mut lambda = config.damping;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        let mut h = Banded::zeros(dim, bandwidth);
        let mut g = vec![0.0; dim];
        for c in &constraints {
            let r = residual(&world[c.a], &world[c.b], &c.z);
            let blocks = [
                (c.a, numeric_jacobian(&world[c.a], &world[c.b], &c.z, false)),
                (c.b, numeric_jacobian(&world[c.a], &world[c.b], &c.z, true)),
            ];
            for (vi, ji) in &blocks {
                if *vi == 0 {
                    continue;
                }
                let oi = 6 * (vi - 1);
                for p in 0..6 {
                    g[oi + p] += (0..6).map(|row| ji[row][p] * r[row]).sum::<f64>();
                }
                for (vj, jj) in &blocks {
                    if *vj == 0 {
                        continue;
                    }
                    let oj = 6 * (vj - 1);
                    if oj > oi {
                        continue;
                    }
                    for p in 0..6 {
                        for q in 0..6 {
                            if oj + q <= oi + p {
                                *h.at(oi + p, oj + q) +=
                                    (0..6).map(|row| ji[row][p] * jj[row][q]).sum::<f64>();
                            }
                        }
                    }
                }
            }
        }

        let mut accepted = false;
        while iterations <= config.max_iterations {
            let mut damped = h.clone();
            for d in 0..dim {
                *damped.at(d, d) += lambda;
            }
            let step = damped.cholesky_solve(&g).map(|x| x.iter().map(|v| -v).collect::<Vec<f64>>());
            if let Some(step) = step {
                let candidate: Vec<Pose> = world
                    .iter()
                    .enumerate()
                    .map(|(k, w)| {
                        if k == 0 {
                            *w
                        } else {
                            let o = 6 * (k - 1);
                            let xi = [
                                step[o],
                                step[o + 1],
                                step[o + 2],
                                step[o + 3],
                                step[o + 4],
                                step[o + 5],
                            ];
                            w.retract(&xi)
                        }
                    })
                    .collect();
                let new_cost = total_cost(&candidate, &constraints);
                if new_cost <= cost {
                    let rel = (cost - new_cost) / Float::max(cost, f64::MIN_POSITIVE);
                    world = candidate;
                    cost = new_cost;
                    lambda = Float::max(lambda / 10.0, 1e-12);
                    accepted = true;
                    if rel < 1e-10 {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
            iterations += 1;
            if lambda > 1e12 {
                break;
            }
        }
        if !accepted {
            // No descent direction left at any damping.
            converged = lambda > 1e12;
            break;
        }
        if converged {
            break;
        }
    }

    let anchor_inv = traj.anchor.inverse();
    let mut refined = traj.clone();
    for (k, w) in world.iter().enumerate().skip(1) {
        refined.poses[k].1 = w.compose(&anchor_inv);
    }
    Ok(RefineOutcome {
        trajectory: refined,
        converged,
        iterations,
        initial_cost,
        final_cost: cost,
    })
}

/// Pose of `j` expressed in the frame of `i` at every shared frame.
pub fn relative_transform_sequence(
    traj_i: &ClusterTrajectory,
    traj_j: &ClusterTrajectory,
) -> Result<Vec<RelativeTransform>, PoseGraphError> {
    let (mut a, mut b) = (0, 0);
    let mut out = Vec::new();
    while a < traj_i.poses.len() && b < traj_j.poses.len() {
        let (ta, tb) = (traj_i.poses[a].0, traj_j.poses[b].0);
        match ta.cmp(&tb) {
            core::cmp::Ordering::Less => a += 1,
            core::cmp::Ordering::Greater => b += 1,
            core::cmp::Ordering::Equal => {
                let delta = traj_i.world_pose(a).inverse().compose(&traj_j.world_pose(b));
                out.push(RelativeTransform { t: ta, delta });
                a += 1;
                b += 1;
            }
        }
    }
    if out.len() < 2 {
        return Err(PoseGraphError::InsufficientOverlap { shared: out.len() });
    }
    Ok(out)
}
