use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use artikin::cli::{settings, Common, Inputs};
use artikin::trackio;
use artikin_core::kinfit::ModelType;

fn artikin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_artikin")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, scene: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(scene);
    let mut args = vec!["synth", "--scene", scene, "--out", s(&out)];
    args.extend_from_slice(extra);
    let o = artikin(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn corpus() -> &'static str {
    concat!(env!("CARGO_MANIFEST_DIR"), "/data/toy_corpus.json")
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = artikin(&["synth", "--scene", "door", "--seed", "7", "--noise", "0.005", "--out", s(out)]);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["tracks.jsonl", "poses.json", "truth.json", "labels.json", "membership.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn infer_from_poses_writes_graph() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "door", &[]);
    let out = dir.path().join("graph.json");
    let o = artikin(&["infer", "--poses", s(&scene.join("poses.json")), "--labels", s(&scene.join("labels.json")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let g = trackio::load_graph(&out).unwrap();
    assert_eq!(g.edges.len(), 1);
    assert_eq!(g.edges[0].model(), ModelType::Rotational);
}

#[test]
fn missing_input_exits_with_io_code() {
    let o = artikin(&["infer", "--poses", "/definitely/not/here.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/definitely/not/here.json"));
}

#[test]
fn invalid_input_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"parts": [{"part_id": 0, "poses": [{"t": 0, "q": [2, 0, 0, 0], "p": [0, 0, 0]}]}]}"#).unwrap();
    let o = artikin(&["infer", "--poses", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("parts[0].poses[0].q"));
    assert_eq!(artikin(&["infer", "--epsilon", "abc"]).status.code(), Some(1));
    assert_eq!(artikin(&["synth", "--scene", "piano", "--out", s(dir.path())]).status.code(), Some(1));
    assert_eq!(artikin(&["infer"]).status.code(), Some(1));
    assert_eq!(artikin(&["--help"]).status.code(), Some(0));
}

#[test]
fn flags_beat_config_beat_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"sigma_pos": 0.05, "epsilon": 0.4, "min_pts": 5}"#).unwrap();
    let common = Common { config: Some(cfg.clone()), epsilon: Some(0.7), ..Common::default() };
    let resolved = settings(&common, &Inputs::default()).unwrap();
    // Flag over config.
    assert_eq!(resolved.infer.segmentation.epsilon, 0.7);
    // Config over default.
    assert_eq!(resolved.infer.noise.sigma_pos, 0.05);
    assert_eq!(resolved.infer.segmentation.min_pts, 5);
    // Default where neither sets a value.
    assert_eq!(resolved.infer.noise.sigma_rot, artikin_core::NoiseModel::default().sigma_rot);

    fs::write(&cfg, r#"{"sigma_pos": 0.05, "nonsense": 1}"#).unwrap();
    let o = artikin(&["infer", "--config", s(&cfg), "--poses", "x.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nonsense"));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "cabinet", &["--noise", "0.002", "--seed", "3"]);
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("g{threads}.json"));
        let o = artikin(&["infer", "--tracks", s(&scene.join("tracks.jsonl")), "--threads", threads, "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(fs::read(out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let g = trackio::parse_graph(std::str::from_utf8(&outputs[0]).unwrap()).unwrap();
    assert_eq!(g.edges.len(), 2);
    assert!(g.edges.iter().all(|e| e.model() == ModelType::Prismatic));
}

#[test]
fn segment_fit_and_eval_chain() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "drawer", &[]);
    let tracks = scene.join("tracks.jsonl");
    let membership = dir.path().join("m.json");
    assert!(artikin(&["segment", "--tracks", s(&tracks), "--out", s(&membership)]).status.success());
    let m = trackio::load_membership(&membership).unwrap();
    assert_eq!(m.values().filter_map(|v| *v).collect::<std::collections::BTreeSet<_>>().len(), 2);

    let fit = artikin(&["fit", "--tracks", s(&tracks)]);
    assert!(fit.status.success());
    let report: serde_json::Value = serde_json::from_slice(&fit.stdout).unwrap();
    assert_eq!(report["edges"].as_array().unwrap().len(), 1);
    assert_eq!(report["edges"][0]["hypotheses"].as_array().unwrap().len(), 3);

    let graph = dir.path().join("g.json");
    assert!(artikin(&["infer", "--tracks", s(&tracks), "--out", s(&graph), "--report", s(&dir.path().join("r.json"))]).status.success());
    let table = dir.path().join("t.json");
    let o = artikin(&[
        "eval", "--estimate", s(&graph), "--truth", s(&scene.join("truth.json")),
        "--membership", s(&membership), "--truth-membership", s(&scene.join("membership.json")),
        "--class", "drawer", "--out", s(&table),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t: serde_json::Value = serde_json::from_slice(&fs::read(&table).unwrap()).unwrap();
    assert_eq!(t["total"]["sh"], "1/1");
    assert!(String::from_utf8_lossy(&o.stdout).contains("drawer"));
}

#[test]
fn dot_output() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "chair", &[]);
    let o = artikin(&["infer", "--poses", s(&scene.join("poses.json")), "--labels", s(&scene.join("labels.json")), "--format", "dot"]);
    assert!(o.status.success());
    let dot = String::from_utf8(o.stdout).unwrap();
    assert!(dot.starts_with("graph kinematic {"));
    assert_eq!(dot.matches(" -- ").count(), 2);
    assert!(dot.contains("label=\"prismatic\"") && dot.contains("label=\"rotational\""));
}

#[test]
fn ground_trains_and_scores() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    assert!(artikin(&["ground", "--corpus", corpus(), "--out", s(&model)]).status.success());
    let utterances = dir.path().join("u.json");
    fs::write(&utterances, trackio::utterances_to_string(&["swing the door open"])).unwrap();
    let labels = dir.path().join("l.json");
    fs::write(&labels, r#"{"cluster_labels": {"0": "wall", "1": "door"}}"#).unwrap();
    let o = artikin(&["ground", "--lang-model", s(&model), "--utterances", s(&utterances), "--labels", s(&labels)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let scores = v["utterances"][0]["scores"].as_array().unwrap();
    assert_eq!(scores.len(), 3);
    let get = |rel: &str| {
        scores.iter().find(|s| s["affordance"] == format!("affordance(door,wall,{rel})")).unwrap()["log_p"].as_f64().unwrap()
    };
    assert!(get("rotational") > get("prismatic"));
}
