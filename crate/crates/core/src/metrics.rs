//! Scoring estimated kinematic graphs against ground truth.
//!
//! Per demonstration: whether the part count matches (`sv_hit`), whether the
//! whole graph matches with equal joint types (`hard_hit`), and how many
//! estimated edges are type-correct edges of the truth (`soft_hits`). Axis
//! errors are folded to [0°, 90°] since axis sign is arbitrary.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;

use crate::geometry::Vec3;
use crate::structure::KinematicGraph;
use crate::track::{PartId, TrackId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("zero-length axis")]
    ZeroVector,
    #[error("no injective part mapping: {0}")]
    UnmatchablePartition(&'static str),
}

/// Angle between two axes in degrees, folded to [0, 90].
pub fn param_error(theta_hat: &Vec3, theta_star: &Vec3) -> Result<f64, MetricsError> {
    let (a, b) = (theta_hat.norm(), theta_star.norm());
    if !(a > 0.0 && b > 0.0) {
        return Err(MetricsError::ZeroVector);
    }
    let e = Float::atan2(theta_hat.cross(theta_star).norm(), theta_hat.dot(theta_star)).to_degrees();
    Ok(e.min(180.0 - e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoScore {
    pub n_star: usize,
    pub n_v: usize,
    pub sv_hit: bool,
    pub hard_hit: bool,
    pub soft_hits: usize,
    pub soft_total: usize,
    /// Degrees, one per type-correct matched prismatic or rotational edge.
    pub param_errors: Vec<f64>,
}

impl DemoScore {
    pub fn mean_param_error(&self) -> Option<f64> {
        (!self.param_errors.is_empty())
            .then(|| self.param_errors.iter().sum::<f64>() / self.param_errors.len() as f64)
    }
}

/// Estimated part id to ground-truth part id.
pub type PartMapping = BTreeMap<PartId, PartId>;

/// Injective estimate-to-truth mapping maximizing the total number of
/// shared tracks. Pairs with no shared track are never mapped.
pub fn match_by_overlap(
    estimate: &BTreeMap<TrackId, PartId>,
    truth: &BTreeMap<TrackId, PartId>,
) -> PartMapping {
    let mut overlap: BTreeMap<(PartId, PartId), usize> = BTreeMap::new();
    for (track, e) in estimate {
        if let Some(t) = truth.get(track) {
            *overlap.entry((*e, *t)).or_default() += 1;
        }
    }
    let est: Vec<PartId> = overlap.keys().map(|k| k.0).collect::<BTreeSet<_>>().into_iter().collect();
    let tru: Vec<PartId> = overlap.keys().map(|k| k.1).collect::<BTreeSet<_>>().into_iter().collect();
    let w: Vec<Vec<usize>> = est
        .iter()
        .map(|e| tru.iter().map(|t| overlap.get(&(*e, *t)).copied().unwrap_or(0)).collect())
        .collect();
    let pairs = if tru.len() <= 16 {
        assign_exact(&w)
    } else {
        assign_greedy(&w)
    };
    pairs.into_iter().map(|(a, b)| (est[a], tru[b])).collect()
}

/// Maximum-weight assignment by dynamic programming over subsets of columns.
fn assign_exact(w: &[Vec<usize>]) -> Vec<(usize, usize)> {
    let rows = w.len();
    let cols = w.first().map_or(0, Vec::len);
    let states = 1usize << cols;
    // best[r][mask]: max weight using rows r.. with columns in `mask` taken.
    let mut best = vec![vec![0usize; states]; rows + 1];
    for r in (0..rows).rev() {
        for mask in 0..states {
            let mut v = best[r + 1][mask];
            for c in 0..cols {
                if mask & (1 << c) == 0 && w[r][c] > 0 {
                    v = v.max(w[r][c] + best[r + 1][mask | (1 << c)]);
                }
            }
            best[r][mask] = v;
        }
    }
    let mut out = Vec::new();
    let mut mask = 0;
    for r in 0..rows {
        if best[r][mask] == best[r + 1][mask] {
            continue;
        }
        let c = (0..cols)
            .find(|&c| mask & (1 << c) == 0 && w[r][c] > 0 && w[r][c] + best[r + 1][mask | (1 << c)] == best[r][mask])
            .expect("consistent table");
        out.push((r, c));
        mask |= 1 << c;
    }
    out
}

fn assign_greedy(w: &[Vec<usize>]) -> Vec<(usize, usize)> {
    let mut cells: Vec<(usize, usize, usize)> = w
        .iter()
        .enumerate()
        .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, v)| (*v, r, c)))
        .filter(|x| x.0 > 0)
        .collect();
    cells.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_r, mut used_c) = (BTreeSet::new(), BTreeSet::new());
    let mut out = Vec::new();
    for (_, r, c) in cells {
        if !used_r.contains(&r) && !used_c.contains(&c) {
            used_r.insert(r);
            used_c.insert(c);
            out.push((r, c));
        }
    }
    out.sort_unstable();
    out
}

/// Maps every part to itself (graphs built over the same part ids).
pub fn identity_mapping(estimate: &KinematicGraph, truth: &KinematicGraph) -> PartMapping {
    estimate
        .parts
        .iter()
        .filter(|p| truth.parts.contains(p))
        .map(|p| (*p, *p))
        .collect()
}

pub fn score_demo(
    estimate: &KinematicGraph,
    truth: &KinematicGraph,
    mapping: &PartMapping,
) -> Result<DemoScore, MetricsError> {
    let mut targets = BTreeSet::new();
    for (e, t) in mapping {
        if !estimate.parts.contains(e) || !truth.parts.contains(t) {
            return Err(MetricsError::UnmatchablePartition("mapping references unknown part"));
        }
        if !targets.insert(*t) {
            return Err(MetricsError::UnmatchablePartition("mapping is not injective"));
        }
    }
    if mapping.is_empty() && !estimate.parts.is_empty() && !truth.parts.is_empty() {
        return Err(MetricsError::UnmatchablePartition("no part corresponds"));
    }

    let n_star = truth.parts.len();
    let n_v = estimate.parts.len();
    let sv_hit = n_v == n_star;
    let mut soft_hits = 0;
    let mut param_errors = Vec::new();
    let mut mapped_edges = BTreeSet::new();
    let mut all_type_correct = true;
    for e in &estimate.edges {
        let (Some(&a), Some(&b)) = (mapping.get(&e.i), mapping.get(&e.j)) else {
            all_type_correct = false;
            continue;
        };
        mapped_edges.insert((a.min(b), a.max(b)));
        match truth.edge(a, b) {
            Some(t) if t.model() == e.model() => {
                soft_hits += 1;
                if let (Some(ah), Some(at)) = (e.params.axis(), t.params.axis()) {
                    param_errors.push(param_error(&ah, &at)?);
                }
            }
            _ => all_type_correct = false,
        }
    }
    let truth_edges: BTreeSet<(PartId, PartId)> =
        truth.edges.iter().map(|e| (e.i.min(e.j), e.i.max(e.j))).collect();
    let hard_hit = sv_hit
        && mapping.len() == n_v
        && all_type_correct
        && mapped_edges.len() == estimate.edges.len()
        && mapped_edges == truth_edges;
    Ok(DemoScore {
        n_star,
        n_v,
        sv_hit,
        hard_hit,
        soft_hits,
        soft_total: truth.edges.len(),
        param_errors,
    })
}

/// Exact ratio of two counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    pub num: usize,
    pub den: usize,
}

impl Fraction {
    pub fn value(&self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.value()
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub class: String,
    pub demos: usize,
    pub sv: Fraction,
    pub sh: Fraction,
    pub ss: Fraction,
    /// Mean over demonstrations of each demonstration's mean axis error.
    pub e_param: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
    pub total: ScoreRow,
}

fn row(class: String, demos: &[&DemoScore]) -> ScoreRow {
    let count = |f: fn(&DemoScore) -> bool| demos.iter().filter(|d| f(d)).count();
    let errors: Vec<f64> = demos.iter().filter_map(|d| d.mean_param_error()).collect();
    ScoreRow {
        class,
        demos: demos.len(),
        sv: Fraction { num: count(|d| d.sv_hit), den: demos.len() },
        sh: Fraction { num: count(|d| d.hard_hit), den: demos.len() },
        ss: Fraction {
            num: demos.iter().map(|d| d.soft_hits).sum(),
            den: demos.iter().map(|d| d.soft_total).sum(),
        },
        e_param: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
    }
}

/// One row per class, in input order, plus a total over all demonstrations.
pub fn aggregate(classes: &[(String, Vec<DemoScore>)]) -> ScoreTable {
    let rows = classes
        .iter()
        .map(|(c, d)| row(c.clone(), &d.iter().collect::<Vec<_>>()))
        .collect();
    let all: Vec<&DemoScore> = classes.iter().flat_map(|(_, d)| d.iter()).collect();
    ScoreTable {
        rows,
        total: row(String::from("total"), &all),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_error_closed_forms() {
        let x = Vec3::x();
        assert_eq!(param_error(&x, &x).unwrap(), 0.0);
        assert!((param_error(&x, &Vec3::y()).unwrap() - 90.0).abs() < 1e-12);
        let d = Vec3::new(1.0, 1.0, 0.0) / 2f64.sqrt();
        assert!((param_error(&x, &d).unwrap() - 45.0).abs() < 1e-12);
        assert!((param_error(&x, &-x).unwrap()).abs() < 1e-12);
        assert_eq!(param_error(&Vec3::zeros(), &x), Err(MetricsError::ZeroVector));
    }

    #[test]
    fn overlap_assignment_prefers_total() {
        // Greedy on the largest cell (0,0)=3 would give 3 + 1; optimum is 2 + 3.
        let est: BTreeMap<TrackId, PartId> = [(0, 0), (1, 0), (2, 0), (3, 0), (4, 0), (5, 1), (6, 1), (7, 1), (8, 1)].into();
        let tru: BTreeMap<TrackId, PartId> = [(0, 10), (1, 10), (2, 10), (3, 11), (4, 11), (5, 10), (6, 10), (7, 10), (8, 11)].into();
        let m = match_by_overlap(&est, &tru);
        assert_eq!(m, [(0, 11), (1, 10)].into());
    }
}
