//! JSON and JSON Lines file formats.
//!
//! Object containers carry `"format_version": 1`. Readers accept a missing
//! version and reject any other value. Distances are meters, angles radians,
//! quaternions `[w, x, y, z]`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use artikin_core::geometry::{Pose, Vec3};
use artikin_core::grounding::{
    tokenize, AnnotatedSentence, FeatureKey, GroundingModel, Phrase, Symbol, SymbolSpace,
};
use artikin_core::kinfit::{ModelParams, ModelType};
use artikin_core::segmentation::{ClusterAssignment, ClusterLabel};
use artikin_core::structure::{EdgeCandidate, GraphEdge, InferReport, KinematicGraph};
use artikin_core::track::{FeatureTrack, PartId, PartLabelMap, PoseTrajectory, TrackFrame, TrackId};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::error::Category;

pub const FORMAT_VERSION: u32 = 1;

/// Largest accepted deviation of a stored quaternion from unit norm.
pub const QUATERNION_TOLERANCE: f64 = 1e-3;

#[derive(Debug)]
pub enum FormatError {
    Io {
        path: String,
        source: io::Error,
    },
    /// Malformed JSON.
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    /// Well-formed JSON that violates the schema or a data invariant.
    Schema {
        path: String,
        line: Option<usize>,
        field: String,
        message: String,
    },
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatError::Io { path, source } => write!(f, "{path}: {source}"),
            FormatError::Parse { path, line, message } => write!(f, "{path}:{line}: parse error: {message}"),
            FormatError::Schema { path, line, field, message } => {
                write!(f, "{path}")?;
                if let Some(l) = line {
                    write!(f, ":{l}")?;
                }
                write!(f, ": field `{field}`: {message}")
            }
        }
    }
}

impl std::error::Error for FormatError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            FormatError::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

const MEMORY: &str = "<input>";

impl FormatError {
    pub fn is_io(&self) -> bool {
        matches!(self, FormatError::Io { .. })
    }

    fn schema(field: impl Into<String>, message: impl fmt::Display) -> Self {
        FormatError::Schema {
            path: MEMORY.into(),
            line: None,
            field: field.into(),
            message: message.to_string(),
        }
    }

    fn on_line(mut self, n: usize) -> Self {
        match &mut self {
            FormatError::Parse { line, .. } => *line = n,
            FormatError::Schema { line, .. } => *line = Some(n),
            FormatError::Io { .. } => {}
        }
        self
    }

    fn in_file(mut self, file: &Path) -> Self {
        match &mut self {
            FormatError::Io { path, .. } | FormatError::Parse { path, .. } | FormatError::Schema { path, .. } => {
                *path = file.display().to_string();
            }
        }
        self
    }
}

fn read(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), FormatError> {
    fs::write(path, text).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn load<T>(path: &Path, parse: impl FnOnce(&str) -> Result<T, FormatError>) -> Result<T, FormatError> {
    parse(&read(path)?).map_err(|e| e.in_file(path))
}

fn join(prefix: &str, rest: &str) -> String {
    match (prefix.is_empty(), rest.is_empty()) {
        (true, _) => rest.to_string(),
        (_, true) => prefix.to_string(),
        _ => format!("{prefix}.{rest}"),
    }
}

fn classify(err: serde_path_to_error::Error<serde_json::Error>, prefix: &str) -> FormatError {
    let path = err.path().to_string();
    let inner = err.into_inner();
    if inner.classify() != Category::Data {
        return FormatError::Parse {
            path: MEMORY.into(),
            line: inner.line(),
            message: inner.to_string(),
        };
    }
    let message = inner.to_string();
    let mut field = join(prefix, if path == "." { "" } else { &path });
    if let Some(name) = message.strip_prefix("missing field `").and_then(|m| m.split('`').next()) {
        field = join(&field, name);
    }
    if field.is_empty() {
        field = ".".into();
    }
    FormatError::Schema {
        path: MEMORY.into(),
        line: (inner.line() > 0).then_some(inner.line()),
        field,
        message,
    }
}

fn from_str<T: DeserializeOwned>(text: &str) -> Result<T, FormatError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| classify(e, ""))?;
    de.end().map_err(|e| FormatError::Parse {
        path: MEMORY.into(),
        line: e.line(),
        message: e.to_string(),
    })?;
    Ok(value)
}

fn from_value<T: DeserializeOwned>(value: serde_json::Value, prefix: &str) -> Result<T, FormatError> {
    serde_path_to_error::deserialize(value).map_err(|e| classify(e, prefix))
}

fn to_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("finite values serialize");
    s.push('\n');
    s
}

fn check_version(v: Option<u32>) -> Result<(), FormatError> {
    match v {
        None | Some(FORMAT_VERSION) => Ok(()),
        Some(other) => Err(FormatError::schema(
            "format_version",
            format!("unsupported version {other}, expected {FORMAT_VERSION}"),
        )),
    }
}

fn vec3(v: [f64; 3]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn pose(q: [f64; 4], p: [f64; 3], field: &str) -> Result<Pose, FormatError> {
    let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !((norm - 1.0).abs() <= QUATERNION_TOLERANCE) {
        return Err(FormatError::schema(field, format!("quaternion norm {norm} is not 1")));
    }
    Ok(Pose::from_wxyz(q, vec3(p)))
}

fn nonzero_axis(v: [f64; 3], field: &str) -> Result<Vec3, FormatError> {
    let a = vec3(v);
    if a.norm() > 0.0 {
        Ok(a)
    } else {
        Err(FormatError::schema(field, "axis must be non-zero"))
    }
}

// Feature tracks: JSON Lines, one track per line.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameDto {
    t: i64,
    p: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackDto {
    track_id: TrackId,
    frames: Vec<FrameDto>,
}

pub fn parse_tracks(text: &str) -> Result<Vec<FeatureTrack>, FormatError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (k, line) in text.lines().enumerate() {
        let n = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let dto: TrackDto = from_str(line).map_err(|e| e.on_line(n))?;
        let track = FeatureTrack::new(
            dto.track_id,
            dto.frames
                .into_iter()
                .map(|f| TrackFrame {
                    t: f.t,
                    point: vec3(f.p),
                    normal: f.n.map(vec3),
                })
                .collect(),
        );
        if let Err(e) = track.validate() {
            let field = match e {
                artikin_core::track::TrackError::NonUnitNormal { .. } => "frames.n",
                artikin_core::track::TrackError::NonFinite { .. } => "frames.p",
                _ => "frames.t",
            };
            return Err(FormatError::schema(field, e).on_line(n));
        }
        if !seen.insert(track.track_id) {
            return Err(FormatError::schema("track_id", format!("duplicate track id {}", track.track_id)).on_line(n));
        }
        out.push(track);
    }
    Ok(out)
}

pub fn tracks_to_string(tracks: &[FeatureTrack]) -> String {
    let mut s = String::new();
    for t in tracks {
        let dto = TrackDto {
            track_id: t.track_id,
            frames: t
                .frames
                .iter()
                .map(|f| FrameDto {
                    t: f.t,
                    p: arr3(&f.point),
                    n: f.normal.as_ref().map(arr3),
                })
                .collect(),
        };
        s.push_str(&serde_json::to_string(&dto).expect("finite values serialize"));
        s.push('\n');
    }
    s
}

pub fn load_tracks(path: &Path) -> Result<Vec<FeatureTrack>, FormatError> {
    load(path, parse_tracks)
}

pub fn save_tracks(path: &Path, tracks: &[FeatureTrack]) -> Result<(), FormatError> {
    write(path, &tracks_to_string(tracks))
}

// Pose trajectories.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseDto {
    t: i64,
    q: [f64; 4],
    p: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartPosesDto {
    part_id: PartId,
    poses: Vec<PoseDto>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFileDto {
    #[serde(default)]
    format_version: Option<u32>,
    parts: Vec<PartPosesDto>,
}

pub fn parse_poses(text: &str) -> Result<Vec<PoseTrajectory>, FormatError> {
    let dto: PoseFileDto = from_str(text)?;
    check_version(dto.format_version)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(dto.parts.len());
    for (i, part) in dto.parts.into_iter().enumerate() {
        if !seen.insert(part.part_id) {
            return Err(FormatError::schema(format!("parts[{i}].part_id"), format!("duplicate part id {}", part.part_id)));
        }
        let mut poses = Vec::with_capacity(part.poses.len());
        for (k, p) in part.poses.into_iter().enumerate() {
            if poses.last().is_some_and(|(t, _)| p.t <= *t) {
                return Err(FormatError::schema(format!("parts[{i}].poses[{k}].t"), "frame indices must strictly increase"));
            }
            poses.push((p.t, pose(p.q, p.p, &format!("parts[{i}].poses[{k}].q"))?));
        }
        out.push(PoseTrajectory {
            part_id: part.part_id,
            poses,
        });
    }
    Ok(out)
}

pub fn poses_to_string(trajectories: &[PoseTrajectory]) -> String {
    to_string(&PoseFileDto {
        format_version: Some(FORMAT_VERSION),
        parts: trajectories
            .iter()
            .map(|tr| PartPosesDto {
                part_id: tr.part_id,
                poses: tr
                    .poses
                    .iter()
                    .map(|(t, p)| PoseDto {
                        t: *t,
                        q: p.wxyz(),
                        p: arr3(p.translation()),
                    })
                    .collect(),
            })
            .collect(),
    })
}

pub fn load_poses(path: &Path) -> Result<Vec<PoseTrajectory>, FormatError> {
    load(path, parse_poses)
}

pub fn save_poses(path: &Path, trajectories: &[PoseTrajectory]) -> Result<(), FormatError> {
    write(path, &poses_to_string(trajectories))
}

// Kinematic graphs.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigidDto {
    q: [f64; 4],
    p: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrismaticDto {
    origin_q: [f64; 4],
    origin_p: [f64; 3],
    axis: [f64; 3],
    range: [f64; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RotationalDto {
    center: [f64; 3],
    axis: [f64; 3],
    radius: f64,
    phase_q: [f64; 4],
    phase_p: [f64; 3],
    range: [f64; 2],
}

fn params_to_value(params: &ModelParams) -> serde_json::Value {
    let v = match params {
        ModelParams::Rigid { fixed } => serde_json::to_value(RigidDto {
            q: fixed.wxyz(),
            p: arr3(fixed.translation()),
        }),
        ModelParams::Prismatic { origin, axis, range } => serde_json::to_value(PrismaticDto {
            origin_q: origin.wxyz(),
            origin_p: arr3(origin.translation()),
            axis: arr3(axis),
            range: [range.0, range.1],
        }),
        ModelParams::Rotational {
            center,
            axis,
            radius,
            phase,
            range,
        } => serde_json::to_value(RotationalDto {
            center: arr3(center),
            axis: arr3(axis),
            radius: *radius,
            phase_q: phase.wxyz(),
            phase_p: arr3(phase.translation()),
            range: [range.0, range.1],
        }),
    };
    v.expect("finite values serialize")
}

fn params_from_value(model: ModelType, value: serde_json::Value, prefix: &str) -> Result<ModelParams, FormatError> {
    let f = |name: &str| format!("{prefix}.{name}");
    Ok(match model {
        ModelType::Rigid => {
            let d: RigidDto = from_value(value, prefix)?;
            ModelParams::Rigid {
                fixed: pose(d.q, d.p, &f("q"))?,
            }
        }
        ModelType::Prismatic => {
            let d: PrismaticDto = from_value(value, prefix)?;
            ModelParams::Prismatic {
                origin: pose(d.origin_q, d.origin_p, &f("origin_q"))?,
                axis: nonzero_axis(d.axis, &f("axis"))?,
                range: (d.range[0], d.range[1]),
            }
        }
        ModelType::Rotational => {
            let d: RotationalDto = from_value(value, prefix)?;
            ModelParams::Rotational {
                center: vec3(d.center),
                axis: nonzero_axis(d.axis, &f("axis"))?,
                radius: d.radius,
                phase: pose(d.phase_q, d.phase_p, &f("phase_q"))?,
                range: (d.range[0], d.range[1]),
            }
        }
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDto {
    i: PartId,
    j: PartId,
    model: String,
    params: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDto {
    #[serde(default)]
    format_version: Option<u32>,
    parts: Vec<PartId>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    labels: BTreeMap<PartId, String>,
    edges: Vec<EdgeDto>,
}

fn graph_dto(graph: &KinematicGraph) -> GraphDto {
    GraphDto {
        format_version: Some(FORMAT_VERSION),
        parts: graph.parts.clone(),
        labels: graph.labels.clone(),
        edges: graph
            .edges
            .iter()
            .map(|e| EdgeDto {
                i: e.i,
                j: e.j,
                model: e.model().name().into(),
                params: params_to_value(&e.params),
            })
            .collect(),
    }
}

fn graph_from_dto(dto: GraphDto) -> Result<KinematicGraph, FormatError> {
    check_version(dto.format_version)?;
    let mut edges = Vec::with_capacity(dto.edges.len());
    for (k, e) in dto.edges.into_iter().enumerate() {
        let model = ModelType::parse(&e.model).ok_or_else(|| {
            FormatError::schema(format!("edges[{k}].model"), format!("unknown model `{}`", e.model))
        })?;
        edges.push(GraphEdge {
            i: e.i,
            j: e.j,
            params: params_from_value(model, e.params, &format!("edges[{k}].params"))?,
        });
    }
    let graph = KinematicGraph {
        parts: dto.parts,
        labels: dto.labels,
        edges,
    };
    graph.validate_tree().map_err(|e| FormatError::schema("edges", e))?;
    Ok(graph)
}

pub fn parse_graph(text: &str) -> Result<KinematicGraph, FormatError> {
    graph_from_dto(from_str(text)?)
}

pub fn graph_to_json(graph: &KinematicGraph) -> String {
    to_string(&graph_dto(graph))
}

/// Undirected DOT graph: one node per part, one edge per joint labeled
/// with its type.
pub fn graph_to_dot(graph: &KinematicGraph) -> String {
    let mut s = String::from("graph kinematic {\n");
    for p in &graph.parts {
        match graph.labels.get(p) {
            Some(l) => s.push_str(&format!("  {p} [label=\"{p}: {}\"];\n", l.replace('"', "\\\""))),
            None => s.push_str(&format!("  {p};\n")),
        }
    }
    for e in &graph.edges {
        s.push_str(&format!("  {} -- {} [label=\"{}\"];\n", e.i, e.j, e.model().name()));
    }
    s.push_str("}\n");
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum GraphFormat {
    #[default]
    Json,
    Dot,
}

pub fn load_graph(path: &Path) -> Result<KinematicGraph, FormatError> {
    load(path, parse_graph)
}

pub fn save_graph(path: &Path, graph: &KinematicGraph, format: GraphFormat) -> Result<(), FormatError> {
    let text = match format {
        GraphFormat::Json => graph_to_json(graph),
        GraphFormat::Dot => graph_to_dot(graph),
    };
    write(path, &text)
}

// Part labels.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelsDto {
    #[serde(default)]
    format_version: Option<u32>,
    cluster_labels: BTreeMap<PartId, String>,
}

pub fn parse_labels(text: &str) -> Result<PartLabelMap, FormatError> {
    let dto: LabelsDto = from_str(text)?;
    check_version(dto.format_version)?;
    Ok(dto.cluster_labels)
}

pub fn labels_to_string(labels: &PartLabelMap) -> String {
    to_string(&LabelsDto {
        format_version: Some(FORMAT_VERSION),
        cluster_labels: labels.clone(),
    })
}

pub fn load_labels(path: &Path) -> Result<PartLabelMap, FormatError> {
    load(path, parse_labels)
}

pub fn save_labels(path: &Path, labels: &PartLabelMap) -> Result<(), FormatError> {
    write(path, &labels_to_string(labels))
}

// Annotated corpora.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationDto {
    symbol: String,
    phi: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhraseDto {
    span: [usize; 2],
    #[serde(default)]
    children: Vec<usize>,
    annotations: Vec<AnnotationDto>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SentenceDto {
    /// Either `tokens` or `text` (tokenized on load).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    phrases: Vec<PhraseDto>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusDto {
    #[serde(default)]
    format_version: Option<u32>,
    sentences: Vec<SentenceDto>,
}

pub fn parse_corpus(text: &str) -> Result<Vec<AnnotatedSentence>, FormatError> {
    let dto: CorpusDto = from_str(text)?;
    check_version(dto.format_version)?;
    let mut out = Vec::with_capacity(dto.sentences.len());
    for (si, s) in dto.sentences.into_iter().enumerate() {
        let tokens = match (s.tokens, s.text) {
            (Some(t), None) => t,
            (None, Some(text)) => tokenize(&text),
            _ => return Err(FormatError::schema(format!("sentences[{si}]"), "expected exactly one of `tokens`, `text`")),
        };
        let mut phrases = Vec::with_capacity(s.phrases.len());
        for (pi, p) in s.phrases.into_iter().enumerate() {
            let field = format!("sentences[{si}].phrases[{pi}]");
            if p.annotations.is_empty() {
                return Err(FormatError::schema(format!("{field}.annotations"), "training phrases need at least one annotation"));
            }
            let mut annotations = Vec::with_capacity(p.annotations.len());
            for (ai, a) in p.annotations.into_iter().enumerate() {
                let sym = Symbol::parse(&a.symbol)
                    .map_err(|e| FormatError::schema(format!("{field}.annotations[{ai}].symbol"), e))?;
                annotations.push((sym, a.phi));
            }
            phrases.push(Phrase {
                span: (p.span[0], p.span[1]),
                children: p.children,
                annotations,
            });
        }
        out.push(AnnotatedSentence { tokens, phrases });
    }
    Ok(out)
}

pub fn corpus_to_string(corpus: &[AnnotatedSentence]) -> String {
    to_string(&CorpusDto {
        format_version: Some(FORMAT_VERSION),
        sentences: corpus
            .iter()
            .map(|s| SentenceDto {
                tokens: Some(s.tokens.clone()),
                text: None,
                phrases: s
                    .phrases
                    .iter()
                    .map(|p| PhraseDto {
                        span: [p.span.0, p.span.1],
                        children: p.children.clone(),
                        annotations: p
                            .annotations
                            .iter()
                            .map(|(sym, phi)| AnnotationDto {
                                symbol: sym.to_string(),
                                phi: *phi,
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect(),
    })
}

pub fn load_corpus(path: &Path) -> Result<Vec<AnnotatedSentence>, FormatError> {
    load(path, parse_corpus)
}

pub fn save_corpus(path: &Path, corpus: &[AnnotatedSentence]) -> Result<(), FormatError> {
    write(path, &corpus_to_string(corpus))
}

// Grounding model weights. Symbols are stored as text so files stay
// readable and independent of symbol numbering.

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum FeatureDto {
    Bias { symbol: String, weight: f64 },
    Token { token: String, symbol: String, weight: f64 },
    Child { child: String, symbol: String, weight: f64 },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDto {
    #[serde(default)]
    format_version: Option<u32>,
    objects: Vec<String>,
    relations: Vec<String>,
    l2: f64,
    features: Vec<FeatureDto>,
}

pub fn parse_model(text: &str) -> Result<GroundingModel, FormatError> {
    let dto: ModelDto = from_str(text)?;
    check_version(dto.format_version)?;
    let space = SymbolSpace::new(dto.objects, dto.relations);
    let mut features = Vec::with_capacity(dto.features.len());
    for (k, f) in dto.features.into_iter().enumerate() {
        let id = |name: &str, text: &str| {
            let field = format!("features[{k}].{name}");
            let sym = Symbol::parse(text).map_err(|e| FormatError::schema(field.clone(), e))?;
            space
                .id(&sym)
                .ok_or_else(|| FormatError::schema(field, format!("`{text}` is not in the symbol space")))
        };
        features.push(match f {
            FeatureDto::Bias { symbol, weight } => (FeatureKey::Bias { symbol: id("symbol", &symbol)? }, weight),
            FeatureDto::Token { token, symbol, weight } => (
                FeatureKey::Token {
                    token,
                    symbol: id("symbol", &symbol)?,
                },
                weight,
            ),
            FeatureDto::Child { child, symbol, weight } => (
                FeatureKey::Child {
                    child: id("child", &child)?,
                    symbol: id("symbol", &symbol)?,
                },
                weight,
            ),
        });
    }
    Ok(GroundingModel::from_parts(space, features, dto.l2))
}

pub fn model_to_string(model: &GroundingModel) -> String {
    let space = model.space();
    let name = |id: usize| space.symbol(id).expect("feature symbol in space").to_string();
    to_string(&ModelDto {
        format_version: Some(FORMAT_VERSION),
        objects: space.objects().to_vec(),
        relations: space.relations().to_vec(),
        l2: model.l2(),
        features: model
            .features()
            .map(|(k, weight)| match k {
                FeatureKey::Bias { symbol } => FeatureDto::Bias {
                    symbol: name(*symbol),
                    weight,
                },
                FeatureKey::Token { token, symbol } => FeatureDto::Token {
                    token: token.clone(),
                    symbol: name(*symbol),
                    weight,
                },
                FeatureKey::Child { child, symbol } => FeatureDto::Child {
                    child: name(*child),
                    symbol: name(*symbol),
                    weight,
                },
            })
            .collect(),
    })
}

pub fn load_model(path: &Path) -> Result<GroundingModel, FormatError> {
    load(path, parse_model)
}

pub fn save_model(path: &Path, model: &GroundingModel) -> Result<(), FormatError> {
    write(path, &model_to_string(model))
}

// Utterances describing one demonstration.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtterancesDto {
    #[serde(default)]
    format_version: Option<u32>,
    utterances: Vec<String>,
}

/// Tokenized utterances.
pub fn parse_utterances(text: &str) -> Result<Vec<Vec<String>>, FormatError> {
    let dto: UtterancesDto = from_str(text)?;
    check_version(dto.format_version)?;
    Ok(dto.utterances.iter().map(|u| tokenize(u)).collect())
}

pub fn utterances_to_string(utterances: &[&str]) -> String {
    to_string(&UtterancesDto {
        format_version: Some(FORMAT_VERSION),
        utterances: utterances.iter().map(|u| u.to_string()).collect(),
    })
}

pub fn load_utterances(path: &Path) -> Result<Vec<Vec<String>>, FormatError> {
    load(path, parse_utterances)
}

// Track-to-part membership: segmentation output or generator truth.
// `null` marks noise or outlier tracks.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MembershipDto {
    #[serde(default)]
    format_version: Option<u32>,
    n_clusters: u32,
    labels: BTreeMap<TrackId, Option<PartId>>,
}

pub type Membership = BTreeMap<TrackId, Option<PartId>>;

pub fn membership_of(assignment: &ClusterAssignment) -> Membership {
    assignment
        .labels
        .iter()
        .map(|(t, l)| {
            (
                *t,
                match l {
                    ClusterLabel::Cluster(c) => Some(*c),
                    ClusterLabel::Noise => None,
                },
            )
        })
        .collect()
}

/// Tracks that belong to some part.
pub fn assigned(membership: &Membership) -> BTreeMap<TrackId, PartId> {
    membership.iter().filter_map(|(t, p)| p.map(|p| (*t, p))).collect()
}

pub fn parse_membership(text: &str) -> Result<Membership, FormatError> {
    let dto: MembershipDto = from_str(text)?;
    check_version(dto.format_version)?;
    if let Some((t, p)) = dto.labels.iter().find(|(_, p)| p.is_some_and(|p| p >= dto.n_clusters)) {
        return Err(FormatError::schema(
            format!("labels.{t}"),
            format!("cluster {} out of range for n_clusters = {}", p.unwrap_or_default(), dto.n_clusters),
        ));
    }
    Ok(dto.labels)
}

pub fn membership_to_string(membership: &Membership, n_clusters: u32) -> String {
    to_string(&MembershipDto {
        format_version: Some(FORMAT_VERSION),
        n_clusters,
        labels: membership.clone(),
    })
}

pub fn load_membership(path: &Path) -> Result<Membership, FormatError> {
    load(path, parse_membership)
}

pub fn save_membership(path: &Path, membership: &Membership, n_clusters: u32) -> Result<(), FormatError> {
    write(path, &membership_to_string(membership, n_clusters))
}

// Inference reports (write-only). Non-finite values become `null`.

#[derive(Serialize)]
struct HypothesisDto {
    model: &'static str,
    params: Option<serde_json::Value>,
    log_lik_vision: Option<f64>,
    log_lik_language: f64,
    n: usize,
    bic: Option<f64>,
}

#[derive(Serialize)]
struct CandidateDto {
    i: PartId,
    j: PartId,
    hypotheses: Vec<HypothesisDto>,
    selected: usize,
    cost: Option<f64>,
}

#[derive(Serialize)]
struct ReportDto {
    format_version: u32,
    n_clusters: usize,
    edges: Vec<CandidateDto>,
    #[serde(skip_serializing_if = "Option::is_none")]
    graph: Option<GraphDto>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn candidate_dto(c: &EdgeCandidate) -> CandidateDto {
    CandidateDto {
        i: c.i,
        j: c.j,
        hypotheses: c
            .hypotheses
            .iter()
            .map(|h| HypothesisDto {
                model: h.model().name(),
                params: h.vision.params.as_ref().map(params_to_value),
                log_lik_vision: finite(h.vision.log_lik),
                log_lik_language: h.log_lik_language,
                n: h.n,
                bic: finite(h.bic),
            })
            .collect(),
        selected: c.selected,
        cost: finite(c.cost),
    }
}

/// Per-pair hypotheses without a selected structure.
pub fn candidates_to_string(n_clusters: usize, edges: &[EdgeCandidate]) -> String {
    to_string(&ReportDto {
        format_version: FORMAT_VERSION,
        n_clusters,
        edges: edges.iter().map(candidate_dto).collect(),
        graph: None,
    })
}

pub fn report_to_string(report: &InferReport) -> String {
    to_string(&ReportDto {
        format_version: FORMAT_VERSION,
        n_clusters: report.n_clusters,
        edges: report.edges.iter().map(candidate_dto).collect(),
        graph: Some(graph_dto(&report.graph)),
    })
}

pub fn save_text(path: &Path, text: &str) -> Result<(), FormatError> {
    write(path, text)
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    read(path)
}

/// Deserializes a JSON document with the same error reporting as the
/// built-in formats.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, FormatError> {
    from_str(text)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    load(path, from_str)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_track_file() {
        assert!(parse_tracks("").unwrap().is_empty());
        assert!(parse_tracks("\n\n").unwrap().is_empty());
    }

    #[test]
    fn one_two_frame_track() {
        let t = parse_tracks(r#"{"track_id": 4, "frames": [{"t": 0, "p": [0, 0, 0]}, {"t": 1, "p": [1, 0, 0], "n": [0, 0, 1]}]}"#).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].frames.len(), 2);
        assert_eq!(t[0].frames[1].normal, Some(Vec3::z()));
    }

    #[test]
    fn duplicate_track_is_a_schema_error() {
        let line = r#"{"track_id": 1, "frames": []}"#;
        match parse_tracks(&format!("{line}\n{line}\n")) {
            Err(FormatError::Schema { line, field, .. }) => {
                assert_eq!(line, Some(2));
                assert_eq!(field, "track_id");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "{\"track_id\": 1, \"frames\": []}\n{\"track_id\": 2, \"frames\": [\n";
        match parse_tracks(text) {
            Err(FormatError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_errors_name_the_field() {
        match parse_tracks(r#"{"track_id": 1, "frames": [{"t": 0}]}"#) {
            Err(FormatError::Schema { field, .. }) => assert_eq!(field, "frames[0].p"),
            other => panic!("{other:?}"),
        }
        match parse_poses(r#"{"parts": [{"part_id": 0, "poses": [{"t": 0, "q": [1, 0, 0, 0], "p": [0, 0, 0], "x": 1}]}]}"#) {
            Err(FormatError::Schema { field, .. }) => assert!(field.starts_with("parts[0].poses[0]"), "{field}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identity_poses_accepted_and_bad_quaternion_rejected() {
        let ok = r#"{"format_version": 1, "parts": [{"part_id": 0, "poses": [{"t": 0, "q": [1, 0, 0, 0], "p": [0, 0, 0]}]}]}"#;
        assert_eq!(parse_poses(ok).unwrap()[0].poses[0].1, Pose::identity());
        let bad = ok.replace("[1, 0, 0, 0]", "[1.002, 0, 0, 0]");
        match parse_poses(&bad) {
            Err(FormatError::Schema { field, .. }) => assert_eq!(field, "parts[0].poses[0].q"),
            other => panic!("{other:?}"),
        }
        let close = ok.replace("[1, 0, 0, 0]", "[1.0005, 0, 0, 0]");
        assert!(parse_poses(&close).is_ok());
    }

    #[test]
    fn unsupported_version_rejected() {
        match parse_labels(r#"{"format_version": 2, "cluster_labels": {}}"#) {
            Err(FormatError::Schema { field, .. }) => assert_eq!(field, "format_version"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn graph_must_be_a_tree() {
        let text = r#"{"parts": [0, 1], "edges": []}"#;
        assert!(matches!(parse_graph(text), Err(FormatError::Schema { .. })));
        let empty = r#"{"parts": [], "edges": []}"#;
        assert!(parse_graph(empty).unwrap().parts.is_empty());
    }

    #[test]
    fn dot_lists_nodes_and_edges() {
        let g = KinematicGraph {
            parts: vec![0, 1],
            labels: [(0, "wall".to_string())].into(),
            edges: vec![GraphEdge {
                i: 0,
                j: 1,
                params: ModelParams::Rigid { fixed: Pose::identity() },
            }],
        };
        let dot = graph_to_dot(&g);
        assert!(dot.contains("0 [label=\"0: wall\"];"));
        assert!(dot.contains("  1;\n"));
        assert!(dot.contains("0 -- 1 [label=\"rigid\"];"));
    }

    #[test]
    fn corpus_accepts_text_or_tokens() {
        let text = r#"{"sentences": [{"text": "Slide the drawer!", "phrases": [{"span": [0, 3], "annotations": [{"symbol": "relation(prismatic)", "phi": true}]}]}]}"#;
        let c = parse_corpus(text).unwrap();
        assert_eq!(c[0].tokens, ["slide", "the", "drawer"]);
        let unannotated = text.replace(r#"{"symbol": "relation(prismatic)", "phi": true}"#, "");
        assert!(matches!(parse_corpus(&unannotated), Err(FormatError::Schema { .. })));
    }
}
