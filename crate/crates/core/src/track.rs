//! Observation containers: feature tracks, part pose trajectories and
//! cluster labels.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::geometry::{Pose, Vec3};

pub type TrackId = u64;
pub type PartId = u32;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrackError {
    #[error("track {track}: frame indices not strictly increasing at t = {t}")]
    NonIncreasingFrames { track: TrackId, t: i64 },
    #[error("track {track}: normal at t = {t} is not unit length")]
    NonUnitNormal { track: TrackId, t: i64 },
    #[error("track {track}: non-finite coordinate at t = {t}")]
    NonFinite { track: TrackId, t: i64 },
    #[error("duplicate track id {0}")]
    DuplicateTrack(TrackId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackFrame {
    pub t: i64,
    pub point: Vec3,
    pub normal: Option<Vec3>,
}

/// A feature followed over time; meters.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrack {
    pub track_id: TrackId,
    pub frames: Vec<TrackFrame>,
}

impl FeatureTrack {
    pub fn new(track_id: TrackId, frames: Vec<TrackFrame>) -> Self {
        Self { track_id, frames }
    }

    pub fn validate(&self) -> Result<(), TrackError> {
        let id = self.track_id;
        let mut last: Option<i64> = None;
        for f in &self.frames {
            if last.is_some_and(|l| f.t <= l) {
                return Err(TrackError::NonIncreasingFrames { track: id, t: f.t });
            }
            last = Some(f.t);
            if !f.point.iter().all(|v| v.is_finite()) {
                return Err(TrackError::NonFinite { track: id, t: f.t });
            }
            if let Some(n) = f.normal {
                if Float::abs(n.norm() - 1.0) > 1e-6 {
                    return Err(TrackError::NonUnitNormal { track: id, t: f.t });
                }
            }
        }
        Ok(())
    }

    /// Frame at index `t`, by binary search.
    pub fn at(&self, t: i64) -> Option<&TrackFrame> {
        self.frames
            .binary_search_by_key(&t, |f| f.t)
            .ok()
            .map(|i| &self.frames[i])
    }

    /// Pairs of frames sharing an index with `other`, in time order.
    pub fn common_frames<'a>(
        &'a self,
        other: &'a FeatureTrack,
    ) -> Vec<(&'a TrackFrame, &'a TrackFrame)> {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < self.frames.len() && j < other.frames.len() {
            let (a, b) = (&self.frames[i], &other.frames[j]);
            match a.t.cmp(&b.t) {
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
                core::cmp::Ordering::Equal => {
                    out.push((a, b));
                    i += 1;
                    j += 1;
                }
            }
        }
        out
    }
}

/// Validates every track and rejects repeated ids.
pub fn validate_tracks(tracks: &[FeatureTrack]) -> Result<(), TrackError> {
    let mut seen = alloc::collections::BTreeSet::new();
    for t in tracks {
        t.validate()?;
        if !seen.insert(t.track_id) {
            return Err(TrackError::DuplicateTrack(t.track_id));
        }
    }
    Ok(())
}

/// World poses of one part over time.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrajectory {
    pub part_id: PartId,
    pub poses: Vec<(i64, Pose)>,
}

impl PoseTrajectory {
    pub fn validate(&self) -> Result<(), TrackError> {
        let mut last: Option<i64> = None;
        for (t, p) in &self.poses {
            if last.is_some_and(|l| *t <= l) {
                return Err(TrackError::NonIncreasingFrames {
                    track: u64::from(self.part_id),
                    t: *t,
                });
            }
            if !p.is_finite() {
                return Err(TrackError::NonFinite {
                    track: u64::from(self.part_id),
                    t: *t,
                });
            }
            last = Some(*t);
        }
        Ok(())
    }
}

/// Object type per part (cluster) id, e.g. `3 -> "drawer"`.
pub type PartLabelMap = BTreeMap<PartId, String>;
