//! Motion segmentation: groups feature tracks that move rigidly together.
//!
//! Two tracks on the same rigid part keep a constant separation and a
//! constant angle between their surface normals. The spread of both
//! quantities over the shared frames is scored with a zero-mean Gaussian,
//! and DBSCAN runs over the resulting affinity graph.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::exec::{Executor, Sequential};
use crate::track::{FeatureTrack, TrackId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SegmentationError {
    #[error("tracks {a} and {b} share {shared} frame(s), need at least 2")]
    InsufficientOverlap { a: TrackId, b: TrackId, shared: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityParams {
    /// Displacement spread, meters.
    pub sigma_d: f64,
    /// Normal-angle spread, radians.
    pub sigma_n: f64,
}

impl Default for AffinityParams {
    fn default() -> Self {
        Self {
            sigma_d: 0.005,
            sigma_n: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationParams {
    pub affinity: AffinityParams,
    /// Minimum affinity for two tracks to be neighbours, in (0, 1).
    pub epsilon: f64,
    /// Neighbourhood size (self included) that makes a core track.
    pub min_pts: usize,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            affinity: AffinityParams::default(),
            epsilon: 0.6,
            min_pts: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidityAffinity {
    pub a: TrackId,
    pub b: TrackId,
    pub displacement: f64,
    pub normal: Option<f64>,
}

impl RigidityAffinity {
    /// Product of the displacement and (when available) normal scores.
    pub fn score(&self) -> f64 {
        self.displacement * self.normal.unwrap_or(1.0)
    }
}

fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

pub fn pairwise_affinity(
    a: &FeatureTrack,
    b: &FeatureTrack,
    params: &AffinityParams,
) -> Result<RigidityAffinity, SegmentationError> {
    let shared = a.common_frames(b);
    if shared.len() < 2 {
        return Err(SegmentationError::InsufficientOverlap {
            a: a.track_id,
            b: b.track_id,
            shared: shared.len(),
        });
    }
    let dists: Vec<f64> = shared
        .iter()
        .map(|(fa, fb)| (fa.point - fb.point).norm())
        .collect();
    let displacement = Float::exp(-variance(&dists) / (2.0 * params.sigma_d * params.sigma_d));

    let angles: Vec<f64> = shared
        .iter()
        .filter_map(|(fa, fb)| match (fa.normal, fb.normal) {
            (Some(na), Some(nb)) => Some(Float::atan2(na.cross(&nb).norm(), na.dot(&nb))),
            _ => None,
        })
        .collect();
    let normal = (angles.len() >= 2)
        .then(|| Float::exp(-variance(&angles) / (2.0 * params.sigma_n * params.sigma_n)));

    Ok(RigidityAffinity {
        a: a.track_id,
        b: b.track_id,
        displacement,
        normal,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClusterLabel {
    Cluster(u32),
    Noise,
}

/// Cluster (or noise) label for every input track. Cluster ids run from 0
/// without gaps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: BTreeMap<TrackId, ClusterLabel>,
    pub n_clusters: u32,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: u32) -> Vec<TrackId> {
        self.labels
            .iter()
            .filter(|(_, l)| **l == ClusterLabel::Cluster(cluster))
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn noise(&self) -> Vec<TrackId> {
        self.labels
            .iter()
            .filter(|(_, l)| **l == ClusterLabel::Noise)
            .map(|(id, _)| *id)
            .collect()
    }

    /// Partition as sorted member lists, one per cluster, in id order.
    pub fn clusters(&self) -> Vec<Vec<TrackId>> {
        let mut out = vec![Vec::new(); self.n_clusters as usize];
        for (id, l) in &self.labels {
            if let ClusterLabel::Cluster(c) = l {
                out[*c as usize].push(*id);
            }
        }
        out
    }
}

/// Dense symmetric affinity matrix over `tracks` (in the given order).
/// Pairs without enough shared frames get affinity 0.
pub fn affinity_matrix<E: Executor>(
    tracks: &[FeatureTrack],
    params: &AffinityParams,
    exec: &E,
) -> Vec<Vec<f64>> {
    let n = tracks.len();
    let rows: Vec<usize> = (0..n).collect();
    let upper = exec.map(&rows, |&i| {
        ((i + 1)..n)
            .map(|j| {
                pairwise_affinity(&tracks[i], &tracks[j], params)
                    .map(|a| a.score())
                    .unwrap_or(0.0)
            })
            .collect::<Vec<f64>>()
    });
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in upper.into_iter().enumerate() {
        m[i][i] = 1.0;
        for (k, s) in row.into_iter().enumerate() {
            let j = i + 1 + k;
            m[i][j] = s;
            m[j][i] = s;
        }
    }
    m
}

pub fn cluster_tracks(tracks: &[FeatureTrack], params: &SegmentationParams) -> ClusterAssignment {
    cluster_tracks_with(tracks, params, &Sequential)
}

/// DBSCAN over the affinity graph. Tracks are visited in ascending id order
/// so the partition does not depend on input order.
pub fn cluster_tracks_with<E: Executor>(
    tracks: &[FeatureTrack],
    params: &SegmentationParams,
    exec: &E,
) -> ClusterAssignment {
    let mut sorted: Vec<&FeatureTrack> = tracks.iter().collect();
    sorted.sort_by_key(|t| t.track_id);
    let owned: Vec<FeatureTrack> = sorted.into_iter().cloned().collect();
    let aff = affinity_matrix(&owned, &params.affinity, exec);
    let n = owned.len();

    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| aff[i][j] >= params.epsilon).collect())
        .collect();
    let is_core = |i: usize| neighbours[i].len() >= params.min_pts.max(1);

    let mut label: Vec<Option<u32>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next = 0u32;
    for start in 0..n {
        if visited[start] || !is_core(start) {
            continue;
        }
        let cluster = next;
        next += 1;
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(i) = queue.pop_front() {
            label[i] = Some(cluster);
            if !is_core(i) {
                continue;
            }
            for &j in &neighbours[i] {
                if label[j].is_none() && !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }

    let labels = owned
        .iter()
        .zip(&label)
        .map(|(t, l)| {
            (
                t.track_id,
                l.map_or(ClusterLabel::Noise, ClusterLabel::Cluster),
            )
        })
        .collect();
    ClusterAssignment {
        labels,
        n_clusters: next,
    }
}
