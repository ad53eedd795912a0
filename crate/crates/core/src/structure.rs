//! Model selection and kinematic structure.
//!
//! Each pair of parts gets three fitted joint hypotheses. Vision and
//! language log-likelihoods are added (the two observations are treated as
//! conditionally independent given the joint) and penalized with BIC; the
//! cheapest hypothesis is the edge's model and its BIC is the edge cost.
//! The kinematic graph is the minimum spanning tree over those costs.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::exec::Executor;
use crate::geometry::{RansacConfig, RelativeTransform};
use crate::grounding::{evaluate, pair_candidates, pair_language_terms, GroundingModel, LanguageObservation};
use crate::kinfit::{bic, fit_all, KinFitError, ModelHypothesis, ModelParams, ModelType, NoiseModel, ParamCounts};
use crate::posegraph::{
    estimate_trajectory, refine_trajectory, relative_transform_sequence, ClusterTrajectory, PoseGraphError,
    RefineConfig,
};
use crate::segmentation::{cluster_tracks_with, ClusterAssignment, SegmentationParams};
use crate::track::{validate_tracks, FeatureTrack, PartId, PartLabelMap, PoseTrajectory, TrackError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StructureError {
    #[error("kinematic graph is disconnected; unreachable parts: {unreachable:?}")]
    DisconnectedGraph { unreachable: Vec<PartId> },
    #[error("not a spanning tree: {0}")]
    NotATree(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphEdge {
    pub i: PartId,
    pub j: PartId,
    pub params: ModelParams,
}

impl GraphEdge {
    pub fn model(&self) -> ModelType {
        self.params.model_type()
    }
}

/// Parts and the joints between them. Estimated and ground-truth graphs
/// share this type.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KinematicGraph {
    pub parts: Vec<PartId>,
    pub labels: PartLabelMap,
    pub edges: Vec<GraphEdge>,
}

impl KinematicGraph {
    /// Checks `|E| = |V| - 1`, known endpoints, and connectivity.
    pub fn validate_tree(&self) -> Result<(), StructureError> {
        if self.parts.is_empty() {
            return if self.edges.is_empty() {
                Ok(())
            } else {
                Err(StructureError::NotATree("edges without parts"))
            };
        }
        if self.edges.len() + 1 != self.parts.len() {
            return Err(StructureError::NotATree("edge count is not parts - 1"));
        }
        let index: BTreeMap<PartId, usize> = self.parts.iter().enumerate().map(|(k, p)| (*p, k)).collect();
        if index.len() != self.parts.len() {
            return Err(StructureError::NotATree("repeated part id"));
        }
        let mut uf = UnionFind::new(self.parts.len());
        for e in &self.edges {
            let (Some(&a), Some(&b)) = (index.get(&e.i), index.get(&e.j)) else {
                return Err(StructureError::NotATree("edge references unknown part"));
            };
            if !uf.union(a, b) {
                return Err(StructureError::NotATree("cycle"));
            }
        }
        Ok(())
    }

    pub fn edge(&self, a: PartId, b: PartId) -> Option<&GraphEdge> {
        self.edges
            .iter()
            .find(|e| (e.i == a && e.j == b) || (e.i == b && e.j == a))
    }
}

/// One hypothesis with its vision and language evidence combined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedHypothesis {
    pub vision: ModelHypothesis,
    pub log_lik_language: f64,
    /// Vision plus language observation count.
    pub n: usize,
    pub bic: f64,
}

impl FusedHypothesis {
    pub fn model(&self) -> ModelType {
        self.vision.model
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCandidate {
    pub i: PartId,
    pub j: PartId,
    /// Rigid, prismatic, rotational, in that order.
    pub hypotheses: [FusedHypothesis; 3],
    pub selected: usize,
    pub cost: f64,
}

impl EdgeCandidate {
    pub fn selected_hypothesis(&self) -> &FusedHypothesis {
        &self.hypotheses[self.selected]
    }

    pub fn selected_model(&self) -> ModelType {
        self.selected_hypothesis().model()
    }

    pub fn is_usable(&self) -> bool {
        self.cost.is_finite() && self.selected_hypothesis().vision.params.is_some()
    }
}

/// Summed language log-likelihoods per joint type (rigid, prismatic,
/// rotational) and the number of utterances they come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanguageTerms {
    pub log_lik: [f64; 3],
    pub utterances: usize,
}

/// Combines vision hypotheses (one per joint type, any order) with optional
/// language terms. Without language the fused BIC is the vision BIC.
pub fn fuse(
    i: PartId,
    j: PartId,
    vision: &[ModelHypothesis],
    language: Option<&LanguageTerms>,
) -> Result<EdgeCandidate, KinFitError> {
    let mut fused = Vec::with_capacity(3);
    for m in ModelType::ALL {
        let v = vision
            .iter()
            .find(|h| h.model == m)
            .copied()
            .ok_or(KinFitError::Empty)?;
        let (lang, extra) = match language {
            Some(l) => (l.log_lik[m.index()], l.utterances),
            None => (0.0, 0),
        };
        let n = v.n + extra;
        fused.push(FusedHypothesis {
            vision: v,
            log_lik_language: lang,
            n,
            bic: bic(v.log_lik + lang, v.k, n)?,
        });
    }
    let hypotheses = [fused[0], fused[1], fused[2]];
    let mut selected = 0;
    for (k, h) in hypotheses.iter().enumerate() {
        if h.bic < hypotheses[selected].bic {
            selected = k;
        }
    }
    Ok(EdgeCandidate {
        i,
        j,
        hypotheses,
        selected,
        cost: hypotheses[selected].bic,
    })
}

/// Fits all joint types to `deltas` and fuses the language evidence of
/// the utterances for this pair of part types.
pub fn fuse_edge(
    i: PartId,
    j: PartId,
    deltas: &[RelativeTransform],
    language: Option<&[LanguageObservation]>,
    part_types: (Option<&str>, Option<&str>),
    noise: &NoiseModel,
    counts: &ParamCounts,
) -> Result<EdgeCandidate, KinFitError> {
    let vision = fit_all(deltas, noise, counts)?;
    let terms = language.and_then(|obs| {
        let (log_lik, utterances) = pair_language_terms(obs, part_types.0, part_types.1);
        (utterances > 0).then_some(LanguageTerms { log_lik, utterances })
    });
    fuse(i, j, &vision, terms.as_ref())
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// False if already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            core::cmp::Ordering::Less => self.parent[ra] = rb,
            core::cmp::Ordering::Greater => self.parent[rb] = ra,
            core::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Kruskal over `(a, b, cost)` edges on `n` vertices; returns the indices of
/// the chosen edges. Ties are broken by `(cost, a, b)`; non-finite costs are
/// skipped.
pub fn minimum_spanning_tree(n: usize, edges: &[(usize, usize, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..edges.len()).filter(|&k| edges[k].2.is_finite()).collect();
    order.sort_by(|&x, &y| {
        let (a, b) = (&edges[x], &edges[y]);
        a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1))
    });
    let mut uf = UnionFind::new(n);
    order
        .into_iter()
        .filter(|&k| uf.union(edges[k].0, edges[k].1))
        .collect()
}

/// Minimum spanning tree over usable candidates; each chosen edge carries
/// its selected model.
pub fn select_structure(candidates: &[EdgeCandidate], parts: &[PartId]) -> Result<KinematicGraph, StructureError> {
    let mut parts: Vec<PartId> = parts.to_vec();
    parts.sort_unstable();
    parts.dedup();
    let index: BTreeMap<PartId, usize> = parts.iter().enumerate().map(|(k, p)| (*p, k)).collect();
    let usable: Vec<&EdgeCandidate> = candidates
        .iter()
        .filter(|c| c.is_usable() && index.contains_key(&c.i) && index.contains_key(&c.j))
        .collect();
    let edges: Vec<(usize, usize, f64)> = usable
        .iter()
        .map(|c| {
            let (a, b) = (index[&c.i], index[&c.j]);
            (a.min(b), a.max(b), c.cost)
        })
        .collect();
    let chosen = minimum_spanning_tree(parts.len(), &edges);
    if parts.len() > 1 && chosen.len() + 1 != parts.len() {
        let mut uf = UnionFind::new(parts.len());
        for &k in &chosen {
            uf.union(edges[k].0, edges[k].1);
        }
        let root = uf.find(0);
        let unreachable = (0..parts.len())
            .filter(|&k| uf.find(k) != root)
            .map(|k| parts[k])
            .collect();
        return Err(StructureError::DisconnectedGraph { unreachable });
    }
    let mut graph_edges: Vec<GraphEdge> = chosen
        .into_iter()
        .map(|k| {
            let c = usable[k];
            GraphEdge {
                i: c.i,
                j: c.j,
                params: c.selected_hypothesis().vision.params.expect("usable edge has params"),
            }
        })
        .collect();
    graph_edges.sort_by_key(|e| (e.i, e.j));
    Ok(KinematicGraph {
        parts,
        labels: PartLabelMap::new(),
        edges: graph_edges,
    })
}

/// Vision input to [`infer`].
#[derive(Debug, Clone, PartialEq)]
pub enum Observations {
    Tracks(Vec<FeatureTrack>),
    Poses(Vec<PoseTrajectory>),
}

/// Trained grounding model plus tokenized utterances describing the video.
#[derive(Debug, Clone, Copy)]
pub struct LanguageInput<'a> {
    pub model: &'a GroundingModel,
    pub utterances: &'a [Vec<String>],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferConfig {
    pub segmentation: SegmentationParams,
    pub ransac: RansacConfig,
    /// Pose-graph refinement of estimated trajectories; `None` skips it.
    pub refine: Option<RefineConfig>,
    pub noise: NoiseModel,
    pub counts: ParamCounts,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            segmentation: SegmentationParams::default(),
            ransac: RansacConfig::default(),
            refine: Some(RefineConfig::default()),
            noise: NoiseModel::default(),
            counts: ParamCounts::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Input,
    Segmentation,
    PoseEstimation,
    ModelFitting,
    StructureSelection,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Input => "input",
            Stage::Segmentation => "segmentation",
            Stage::PoseEstimation => "pose estimation",
            Stage::ModelFitting => "model fitting",
            Stage::StructureSelection => "structure selection",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    PoseGraph(#[from] PoseGraphError),
    #[error(transparent)]
    KinFit(#[from] KinFitError),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error("no parts observed")]
    NoParts,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{stage}: {error}")]
pub struct InferError {
    pub stage: Stage,
    pub part: Option<PartId>,
    pub error: StageError,
}

impl InferError {
    fn new(stage: Stage, error: impl Into<StageError>) -> Self {
        Self {
            stage,
            part: None,
            error: error.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferReport {
    pub n_clusters: usize,
    /// Track clustering, present when the input was feature tracks.
    pub clusters: Option<ClusterAssignment>,
    pub trajectories: Vec<ClusterTrajectory>,
    pub edges: Vec<EdgeCandidate>,
    pub graph: KinematicGraph,
}

fn trajectories_from_tracks<E: Executor>(
    tracks: &[FeatureTrack],
    config: &InferConfig,
    exec: &E,
) -> Result<(ClusterAssignment, Vec<ClusterTrajectory>), InferError> {
    validate_tracks(tracks).map_err(|e| InferError::new(Stage::Input, e))?;
    let assignment = cluster_tracks_with(tracks, &config.segmentation, exec);
    let by_id: BTreeMap<u64, &FeatureTrack> = tracks.iter().map(|t| (t.track_id, t)).collect();
    let clusters: Vec<(PartId, Vec<u64>)> = assignment
        .clusters()
        .into_iter()
        .enumerate()
        .map(|(c, m)| (c as PartId, m))
        .collect();
    let results = exec.map(&clusters, |(cluster, members)| {
        let cluster = *cluster;
        let refs: Vec<&FeatureTrack> = members.iter().map(|id| by_id[id]).collect();
        let traj = estimate_trajectory(cluster, &refs, &config.ransac).map_err(|e| (cluster, e))?;
        match &config.refine {
            Some(rc) => refine_trajectory(&traj, &refs, rc)
                .map(|o| o.trajectory)
                .map_err(|e| (cluster, e)),
            None => Ok(traj),
        }
    });
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(t) => out.push(t),
            Err((cluster, e)) => {
                return Err(InferError {
                    stage: Stage::PoseEstimation,
                    part: Some(cluster),
                    error: e.into(),
                })
            }
        }
    }
    Ok((assignment, out))
}

/// Everything [`infer`] computes before structure selection.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeEstimates {
    pub clusters: Option<ClusterAssignment>,
    pub trajectories: Vec<ClusterTrajectory>,
    pub edges: Vec<EdgeCandidate>,
}

impl EdgeEstimates {
    pub fn parts(&self) -> Vec<PartId> {
        self.trajectories.iter().map(|t| t.cluster).collect()
    }
}

/// Segmentation (for tracks), per-part trajectories, then joint fitting and
/// language fusion for every pair of parts.
pub fn estimate_edges<E: Executor>(
    observations: &Observations,
    labels: &PartLabelMap,
    language: Option<LanguageInput<'_>>,
    config: &InferConfig,
    exec: &E,
) -> Result<EdgeEstimates, InferError> {
    let (clusters, trajectories) = match observations {
        Observations::Tracks(tracks) => {
            let (a, t) = trajectories_from_tracks(tracks, config, exec)?;
            (Some(a), t)
        }
        Observations::Poses(poses) => {
            let mut seen = alloc::collections::BTreeSet::new();
            for p in poses {
                p.validate().map_err(|e| InferError::new(Stage::Input, e))?;
                if !seen.insert(p.part_id) {
                    return Err(InferError::new(
                        Stage::Input,
                        TrackError::DuplicateTrack(u64::from(p.part_id)),
                    ));
                }
            }
            let mut t: Vec<ClusterTrajectory> = poses.iter().map(ClusterTrajectory::from_world_poses).collect();
            t.sort_by_key(|c| c.cluster);
            (None, t)
        }
    };
    if trajectories.is_empty() {
        return Err(InferError::new(Stage::Input, StageError::NoParts));
    }
    let parts: Vec<PartId> = trajectories.iter().map(|t| t.cluster).collect();

    let observations_lang: Option<Vec<LanguageObservation>> = language.map(|lang| {
        let mut candidates = Vec::new();
        for (a, i) in parts.iter().enumerate() {
            for j in &parts[a + 1..] {
                if let (Some(ti), Some(tj)) = (labels.get(i), labels.get(j)) {
                    candidates.extend(pair_candidates(ti, tj));
                }
            }
        }
        candidates.sort();
        candidates.dedup();
        lang.utterances
            .iter()
            .map(|u| evaluate(lang.model, u, None, &candidates))
            .collect()
    });

    let pairs: Vec<(usize, usize)> = (0..trajectories.len())
        .flat_map(|a| ((a + 1)..trajectories.len()).map(move |b| (a, b)))
        .collect();
    let fitted = exec.map(&pairs, |&(a, b)| {
        let (ti, tj) = (&trajectories[a], &trajectories[b]);
        let deltas = match relative_transform_sequence(ti, tj) {
            Ok(d) => d,
            Err(PoseGraphError::InsufficientOverlap { .. }) => return Ok(None),
            Err(e) => return Err(InferError::new(Stage::ModelFitting, e)),
        };
        let types = (
            labels.get(&ti.cluster).map(String::as_str),
            labels.get(&tj.cluster).map(String::as_str),
        );
        fuse_edge(
            ti.cluster,
            tj.cluster,
            &deltas,
            observations_lang.as_deref(),
            types,
            &config.noise,
            &config.counts,
        )
        .map(Some)
        .map_err(|e| InferError::new(Stage::ModelFitting, e))
    });
    let mut edges = Vec::new();
    for f in fitted {
        if let Some(c) = f? {
            edges.push(c);
        }
    }

    Ok(EdgeEstimates {
        clusters,
        trajectories,
        edges,
    })
}

/// Full pipeline: [`estimate_edges`] followed by structure selection.
pub fn infer<E: Executor>(
    observations: &Observations,
    labels: &PartLabelMap,
    language: Option<LanguageInput<'_>>,
    config: &InferConfig,
    exec: &E,
) -> Result<InferReport, InferError> {
    let est = estimate_edges(observations, labels, language, config, exec)?;
    let parts = est.parts();
    let mut graph =
        select_structure(&est.edges, &parts).map_err(|e| InferError::new(Stage::StructureSelection, e))?;
    graph.labels = labels
        .iter()
        .filter(|(p, _)| parts.contains(p))
        .map(|(p, l)| (*p, l.clone()))
        .collect();
    Ok(InferReport {
        n_clusters: parts.len(),
        clusters: est.clusters,
        trajectories: est.trajectories,
        edges: est.edges,
        graph,
    })
}
