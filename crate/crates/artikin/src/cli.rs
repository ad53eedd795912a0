//! The `artikin` command line.
//!
//! Exit codes: 0 on success, 1 for invalid input or arguments, 2 when a file
//! cannot be read or written.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use artikin_core::grounding::{evaluate, pair_candidates, train, Affordance, SymbolSpace, TrainConfig};
use artikin_core::metrics::{aggregate, identity_mapping, match_by_overlap, score_demo, DemoScore, ScoreRow, ScoreTable};
use artikin_core::segmentation::cluster_tracks_with;
use artikin_core::structure::{estimate_edges, infer, LanguageInput, Observations};
use artikin_core::synth::{builtin_scene, builtin_scenes, generate};
use artikin_core::track::PartLabelMap;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{RunConfig, Settings};
use crate::exec::RayonExecutor;
use crate::trackio::{self, FormatError, GraphFormat};

#[derive(Debug, Parser)]
#[command(name = "artikin", version, about = "Kinematic structure estimation for articulated objects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a builtin synthetic scene.
    Synth(SynthArgs),
    /// Cluster feature tracks into rigid parts.
    Segment(RunArgs),
    /// Fit joint hypotheses for every pair of parts.
    Fit(RunArgs),
    /// Train a grounding model, or score utterances with one.
    Ground(GroundArgs),
    /// Estimate the kinematic graph.
    Infer(InferArgs),
    /// Score estimated graphs against ground truth.
    Eval(EvalArgs),
}

/// Options shared by every pipeline stage.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration; explicit flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per CPU).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub sigma_pos: Option<f64>,
    #[arg(long)]
    pub sigma_rot: Option<f64>,
    /// Segmentation displacement spread, meters.
    #[arg(long)]
    pub sigma_d: Option<f64>,
    #[arg(long)]
    pub sigma_n: Option<f64>,
    /// Minimum affinity for DBSCAN neighbours.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub min_pts: Option<usize>,
    #[arg(long)]
    pub ransac_iterations: Option<usize>,
    #[arg(long)]
    pub inlier_threshold: Option<f64>,
    /// Skip pose-graph refinement of estimated trajectories.
    #[arg(long)]
    pub no_refine: bool,
    #[arg(long)]
    pub k_rigid: Option<u32>,
    #[arg(long)]
    pub k_prismatic: Option<u32>,
    #[arg(long)]
    pub k_rotational: Option<u32>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Inputs {
    /// Feature tracks (JSON Lines).
    #[arg(long)]
    pub tracks: Option<PathBuf>,
    /// Part pose trajectories (JSON).
    #[arg(long)]
    pub poses: Option<PathBuf>,
    /// Part labels (JSON).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Trained grounding model (JSON).
    #[arg(long)]
    pub lang_model: Option<PathBuf>,
    /// Utterances describing the demonstration (JSON).
    #[arg(long)]
    pub utterances: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value_t = GraphFormat::Json)]
    pub format: GraphFormat,
    /// Also write the per-pair hypotheses and costs here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Scene name (door, drawer, cabinet, chair, static_pair).
    #[arg(long)]
    pub scene: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Track noise standard deviation, meters.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Random-walk clutter tracks to add.
    #[arg(long, default_value_t = 0)]
    pub outliers: usize,
}

#[derive(Debug, Clone, Args)]
pub struct GroundArgs {
    /// Annotated corpus to train on; the model is written to --out.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[command(flatten)]
    pub inputs: Inputs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Estimated graph; repeat once per demonstration.
    #[arg(long, required = true)]
    pub estimate: Vec<PathBuf>,
    /// Ground-truth graph, paired with --estimate by position.
    #[arg(long, required = true)]
    pub truth: Vec<PathBuf>,
    /// Estimated track membership, for overlap-based part matching.
    #[arg(long)]
    pub membership: Vec<PathBuf>,
    /// True track membership, paired with --membership.
    #[arg(long)]
    pub truth_membership: Vec<PathBuf>,
    /// Object class per demonstration (one value applies to all).
    #[arg(long)]
    pub class: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Format(e) if e.is_io() => 2,
            CliError::Format(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

fn invalid(msg: impl std::fmt::Display) -> CliError {
    CliError::Invalid(msg.to_string())
}

impl Common {
    fn layer(&self) -> RunConfig {
        RunConfig {
            sigma_pos: self.sigma_pos,
            sigma_rot: self.sigma_rot,
            sigma_d: self.sigma_d,
            sigma_n: self.sigma_n,
            epsilon: self.epsilon,
            min_pts: self.min_pts,
            ransac_iterations: self.ransac_iterations,
            inlier_threshold: self.inlier_threshold,
            refine: self.no_refine.then_some(false),
            k_rigid: self.k_rigid,
            k_prismatic: self.k_prismatic,
            k_rotational: self.k_rotational,
            seed: self.seed,
            threads: self.threads,
            ..RunConfig::default()
        }
    }
}

impl Inputs {
    fn layer(&self) -> RunConfig {
        RunConfig {
            tracks: self.tracks.clone(),
            poses: self.poses.clone(),
            labels: self.labels.clone(),
            lang_model: self.lang_model.clone(),
            utterances: self.utterances.clone(),
            out: self.out.clone(),
            ..RunConfig::default()
        }
    }
}

/// Flags over config file over defaults.
pub fn settings(common: &Common, inputs: &Inputs) -> Result<Settings, CliError> {
    let file = match &common.config {
        Some(path) => trackio::load_json::<RunConfig>(path)?,
        None => RunConfig::default(),
    };
    let flags = common.layer().overlay(inputs.layer());
    file.overlay(flags).resolve().map_err(invalid)
}

fn executor(s: &Settings) -> Result<RayonExecutor, CliError> {
    RayonExecutor::new(s.threads).map_err(|e| invalid(format!("thread pool: {e}")))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => Ok(trackio::save_text(p, text)?),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}

fn observations(s: &Settings) -> Result<Observations, CliError> {
    match (&s.tracks, &s.poses) {
        (Some(t), None) => Ok(Observations::Tracks(trackio::load_tracks(t)?)),
        (None, Some(p)) => Ok(Observations::Poses(trackio::load_poses(p)?)),
        _ => Err(invalid("give exactly one of --tracks, --poses")),
    }
}

fn labels(s: &Settings) -> Result<PartLabelMap, CliError> {
    Ok(match &s.labels {
        Some(p) => trackio::load_labels(p)?,
        None => PartLabelMap::new(),
    })
}

type Language = Option<(artikin_core::grounding::GroundingModel, Vec<Vec<String>>)>;

fn language(s: &Settings, labels: &PartLabelMap) -> Result<Language, CliError> {
    match (&s.lang_model, &s.utterances) {
        (Some(m), Some(u)) => {
            if labels.is_empty() {
                eprintln!("warning: no part labels given, language cannot inform any edge");
            }
            Ok(Some((trackio::load_model(m)?, trackio::load_utterances(u)?)))
        }
        (None, None) => Ok(None),
        _ => Err(invalid("--lang-model and --utterances must be given together")),
    }
}

fn run_synth(a: &SynthArgs) -> Result<(), CliError> {
    let mut spec = builtin_scene(&a.scene).ok_or_else(|| {
        let names: Vec<String> = builtin_scenes().into_iter().map(|s| s.name).collect();
        invalid(format!("unknown scene `{}` (available: {})", a.scene, names.join(", ")))
    })?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(noise) = a.noise {
        spec.noise = noise;
    }
    spec.outlier_tracks = a.outliers;
    let scene = generate(&spec).map_err(invalid)?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::Io(format!("{}: {e}", a.out.display())))?;
    let membership: trackio::Membership = scene
        .tracks
        .iter()
        .map(|t| (t.track_id, scene.membership.get(&t.track_id).copied()))
        .collect();
    trackio::save_tracks(&a.out.join("tracks.jsonl"), &scene.tracks)?;
    trackio::save_poses(&a.out.join("poses.json"), &scene.poses)?;
    trackio::save_graph(&a.out.join("truth.json"), &scene.truth, GraphFormat::Json)?;
    trackio::save_labels(&a.out.join("labels.json"), &scene.labels)?;
    trackio::save_membership(&a.out.join("membership.json"), &membership, spec.parts.len() as u32)?;
    Ok(())
}

fn run_segment(a: &RunArgs) -> Result<(), CliError> {
    let s = settings(&a.common, &a.inputs)?;
    let path = s.tracks.as_ref().ok_or_else(|| invalid("--tracks is required"))?;
    let tracks = trackio::load_tracks(path)?;
    let assignment = cluster_tracks_with(&tracks, &s.infer.segmentation, &executor(&s)?);
    eprintln!(
        "{} cluster(s), {} noise track(s)",
        assignment.n_clusters,
        assignment.noise().len()
    );
    emit(
        s.out.as_deref(),
        &trackio::membership_to_string(&trackio::membership_of(&assignment), assignment.n_clusters),
    )
}

fn run_fit(a: &RunArgs) -> Result<(), CliError> {
    let s = settings(&a.common, &a.inputs)?;
    let obs = observations(&s)?;
    let labels = labels(&s)?;
    let lang = language(&s, &labels)?;
    let input = lang.as_ref().map(|(model, utterances)| LanguageInput { model, utterances });
    let est = estimate_edges(&obs, &labels, input, &s.infer, &executor(&s)?).map_err(invalid)?;
    emit(s.out.as_deref(), &trackio::candidates_to_string(est.trajectories.len(), &est.edges))
}

fn run_infer(a: &InferArgs) -> Result<(), CliError> {
    let s = settings(&a.run.common, &a.run.inputs)?;
    let obs = observations(&s)?;
    let labels = labels(&s)?;
    let lang = language(&s, &labels)?;
    let input = lang.as_ref().map(|(model, utterances)| LanguageInput { model, utterances });
    let report = infer(&obs, &labels, input, &s.infer, &executor(&s)?).map_err(invalid)?;
    for p in &report.graph.parts {
        if !labels.is_empty() && !labels.contains_key(p) {
            eprintln!("warning: part {p} has no label");
        }
    }
    if let Some(path) = &a.report {
        trackio::save_text(path, &trackio::report_to_string(&report))?;
    }
    let text = match a.format {
        GraphFormat::Json => trackio::graph_to_json(&report.graph),
        GraphFormat::Dot => trackio::graph_to_dot(&report.graph),
    };
    emit(s.out.as_deref(), &text)
}

#[derive(Serialize)]
struct ScoredAffordance {
    affordance: String,
    log_p: f64,
}

#[derive(Serialize)]
struct ScoredUtterance {
    tokens: Vec<String>,
    scores: Vec<ScoredAffordance>,
}

#[derive(Serialize)]
struct GroundOutput {
    format_version: u32,
    utterances: Vec<ScoredUtterance>,
}

fn run_ground(a: &GroundArgs) -> Result<(), CliError> {
    let s = settings(&a.common, &a.inputs)?;
    if let Some(corpus_path) = &a.corpus {
        let corpus = trackio::load_corpus(corpus_path)?;
        let defaults = TrainConfig::default();
        let config = TrainConfig {
            l2: a.l2.unwrap_or(defaults.l2),
            epochs: a.epochs.unwrap_or(defaults.epochs),
            ..defaults
        };
        if !(config.l2.is_finite() && config.l2 >= 0.0) {
            return Err(invalid("--l2 must be a non-negative number"));
        }
        let model = train(&corpus, &SymbolSpace::from_corpus(&corpus), &config).map_err(invalid)?;
        return emit(s.out.as_deref(), &trackio::model_to_string(&model));
    }
    let labels = labels(&s)?;
    let (model, utterances) = match (&s.lang_model, &s.utterances) {
        (Some(m), Some(u)) => (trackio::load_model(m)?, trackio::load_utterances(u)?),
        _ => return Err(invalid("give --corpus to train, or --lang-model and --utterances to score")),
    };
    let types: BTreeSet<&str> = if labels.is_empty() {
        model.space().objects().iter().map(String::as_str).collect()
    } else {
        labels.values().map(String::as_str).collect()
    };
    let types: Vec<&str> = types.into_iter().collect();
    let mut candidates: Vec<Affordance> = Vec::new();
    for (k, a) in types.iter().enumerate() {
        for b in &types[k + 1..] {
            candidates.extend(pair_candidates(a, b));
        }
    }
    let output = GroundOutput {
        format_version: trackio::FORMAT_VERSION,
        utterances: utterances
            .iter()
            .map(|u| {
                let obs = evaluate(&model, u, None, &candidates);
                ScoredUtterance {
                    tokens: obs.tokens,
                    scores: obs
                        .scores
                        .into_iter()
                        .map(|(aff, log_p)| ScoredAffordance {
                            affordance: artikin_core::grounding::Symbol::Affordance(aff).to_string(),
                            log_p,
                        })
                        .collect(),
                }
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&output).expect("finite values serialize");
    text.push('\n');
    emit(s.out.as_deref(), &text)
}

#[derive(Serialize)]
struct RowOutput {
    class: String,
    demos: usize,
    sv: String,
    sh: String,
    ss: String,
    e_param: Option<f64>,
}

#[derive(Serialize)]
struct TableOutput {
    format_version: u32,
    rows: Vec<RowOutput>,
    total: RowOutput,
}

fn row_output(r: &ScoreRow) -> RowOutput {
    RowOutput {
        class: r.class.clone(),
        demos: r.demos,
        sv: r.sv.to_string(),
        sh: r.sh.to_string(),
        ss: r.ss.to_string(),
        e_param: r.e_param,
    }
}

/// Aligned plain-text rendering of a score table.
pub fn table_text(table: &ScoreTable) -> String {
    let mut s = format!("{:<16} {:>5} {:>8} {:>8} {:>8} {:>9}\n", "class", "demos", "S_v", "S_h", "S_s", "e_param");
    for r in table.rows.iter().chain(std::iter::once(&table.total)) {
        let e = r.e_param.map_or("-".to_string(), |e| format!("{e:.2}°"));
        s.push_str(&format!(
            "{:<16} {:>5} {:>8} {:>8} {:>8} {:>9}\n",
            r.class,
            r.demos,
            r.sv.to_string(),
            r.sh.to_string(),
            r.ss.to_string(),
            e
        ));
    }
    s
}

fn run_eval(a: &EvalArgs) -> Result<(), CliError> {
    let n = a.estimate.len();
    if a.truth.len() != n {
        return Err(invalid("--estimate and --truth must be given the same number of times"));
    }
    if a.membership.len() != a.truth_membership.len() || !(a.membership.is_empty() || a.membership.len() == n) {
        return Err(invalid("--membership and --truth-membership must be given once per demonstration, or not at all"));
    }
    if !(a.class.is_empty() || a.class.len() == 1 || a.class.len() == n) {
        return Err(invalid("--class must be given once, or once per demonstration"));
    }
    let mut classes: Vec<(String, Vec<DemoScore>)> = Vec::new();
    for k in 0..n {
        let est = trackio::load_graph(&a.estimate[k])?;
        let truth = trackio::load_graph(&a.truth[k])?;
        let mapping = if a.membership.is_empty() {
            identity_mapping(&est, &truth)
        } else {
            let em = trackio::assigned(&trackio::load_membership(&a.membership[k])?);
            let tm = trackio::assigned(&trackio::load_membership(&a.truth_membership[k])?);
            match_by_overlap(&em, &tm)
        };
        let score = score_demo(&est, &truth, &mapping).map_err(|e| invalid(format!("{}: {e}", a.estimate[k].display())))?;
        let class = match a.class.len() {
            0 => "all".to_string(),
            1 => a.class[0].clone(),
            _ => a.class[k].clone(),
        };
        match classes.iter_mut().find(|(c, _)| *c == class) {
            Some((_, v)) => v.push(score),
            None => classes.push((class, vec![score])),
        }
    }
    let table = aggregate(&classes);
    let output = TableOutput {
        format_version: trackio::FORMAT_VERSION,
        rows: table.rows.iter().map(row_output).collect(),
        total: row_output(&table.total),
    };
    let mut json = serde_json::to_string_pretty(&output).expect("finite values serialize");
    json.push('\n');
    emit(a.out.as_deref(), &json)?;
    if a.out.is_some() {
        print!("{}", table_text(&table));
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Segment(a) => run_segment(a),
        Command::Fit(a) => run_fit(a),
        Command::Ground(a) => run_ground(a),
        Command::Infer(a) => run_infer(a),
        Command::Eval(a) => run_eval(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
