use artikin::trackio::*;
use artikin_core::geometry::{Pose, Vec3};
use artikin_core::grounding::{train, AnnotatedSentence, Phrase, Symbol, SymbolSpace, TrainConfig};
use artikin_core::kinfit::ModelParams;
use artikin_core::structure::{GraphEdge, KinematicGraph};
use artikin_core::track::{FeatureTrack, PoseTrajectory, TrackFrame};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        4 => -1e3..1e3f64,
        1 => prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
    ]
}

fn vec3() -> impl Strategy<Value = Vec3> {
    (finite(), finite(), finite()).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn unit() -> impl Strategy<Value = Vec3> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-zero", |(x, y, z)| x * x + y * y + z * z > 1e-2)
        .prop_map(|(x, y, z)| Vec3::new(x, y, z).normalize())
}

fn pose() -> impl Strategy<Value = Pose> {
    (unit(), -3.2..3.2f64, vec3()).prop_map(|(a, angle, t)| {
        let r = Pose::from_axis_angle(&a, angle);
        Pose::from_rotation(*r.rotation(), t)
    })
}

fn params() -> impl Strategy<Value = ModelParams> {
    prop_oneof![
        pose().prop_map(|fixed| ModelParams::Rigid { fixed }),
        (pose(), unit(), finite(), finite()).prop_map(|(origin, axis, a, b)| ModelParams::Prismatic { origin, axis, range: (a, b) }),
        (vec3(), unit(), finite(), pose(), finite(), finite()).prop_map(|(center, axis, radius, phase, a, b)| {
            ModelParams::Rotational { center, axis, radius, phase, range: (a, b) }
        }),
    ]
}

fn graph() -> impl Strategy<Value = KinematicGraph> {
    (1usize..7)
        .prop_flat_map(|n| {
            (
                prop::collection::btree_set(0u32..1000, n),
                prop::collection::vec(any::<prop::sample::Index>(), n),
                prop::collection::vec(params(), n),
                prop::collection::vec(prop::option::of("[a-z]{1,8}"), n),
            )
        })
        .prop_map(|(ids, parents, params, labels)| {
            let parts: Vec<u32> = ids.into_iter().collect();
            let edges = (1..parts.len())
                .map(|c| GraphEdge { i: parts[parents[c].index(c)], j: parts[c], params: params[c] })
                .collect();
            let labels = parts.iter().zip(labels).filter_map(|(p, l)| l.map(|l| (*p, l))).collect();
            KinematicGraph { parts, labels, edges }
        })
}

fn tracks() -> impl Strategy<Value = Vec<FeatureTrack>> {
    prop::collection::btree_map(
        any::<u64>(),
        prop::collection::btree_map(any::<i64>(), (vec3(), prop::option::of(unit())), 0..6),
        0..6,
    )
    .prop_map(|m| {
        m.into_iter()
            .map(|(id, frames)| {
                FeatureTrack::new(id, frames.into_iter().map(|(t, (point, normal))| TrackFrame { t, point, normal }).collect())
            })
            .collect()
    })
}

fn trajectories() -> impl Strategy<Value = Vec<PoseTrajectory>> {
    prop::collection::btree_map(any::<u32>(), prop::collection::btree_map(any::<i64>(), pose(), 0..6), 0..4).prop_map(|m| {
        m.into_iter().map(|(part_id, poses)| PoseTrajectory { part_id, poses: poses.into_iter().collect() }).collect()
    })
}

fn corpus() -> impl Strategy<Value = Vec<AnnotatedSentence>> {
    let sentence = (prop::collection::vec("[a-z]{1,6}", 1..6), prop::collection::vec(("[a-z]{1,5}", any::<bool>()), 1..4))
        .prop_map(|(tokens, ann)| {
            let n = tokens.len();
            let mut phrases = vec![Phrase {
                span: (0, n),
                children: vec![],
                annotations: ann.iter().map(|(o, phi)| (Symbol::Relation(o.clone()), *phi)).collect(),
            }];
            if n > 1 {
                phrases[0].children.push(1);
                phrases.push(Phrase { span: (1, n), children: vec![], annotations: vec![(Symbol::Object(tokens[1].clone()), true)] });
            }
            AnnotatedSentence { tokens, phrases }
        });
    prop::collection::vec(sentence, 1..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn tracks_round_trip(t in tracks()) {
        let back = parse_tracks(&tracks_to_string(&t)).unwrap();
        prop_assert_eq!(back.len(), t.len());
        prop_assert_eq!(back, t);
    }

    #[test]
    fn poses_round_trip(p in trajectories()) {
        prop_assert_eq!(parse_poses(&poses_to_string(&p)).unwrap(), p);
    }

    #[test]
    fn graphs_round_trip(g in graph()) {
        let back = parse_graph(&graph_to_json(&g)).unwrap();
        prop_assert_eq!(&back, &g);
        let dot = graph_to_dot(&g);
        prop_assert_eq!(dot.matches(" -- ").count(), g.edges.len());
    }

    #[test]
    fn labels_round_trip(l in prop::collection::btree_map(any::<u32>(), "[a-z_]{1,10}", 0..6)) {
        prop_assert_eq!(parse_labels(&labels_to_string(&l)).unwrap(), l);
    }

    #[test]
    fn membership_round_trip(m in prop::collection::btree_map(any::<u64>(), prop::option::of(0u32..5), 0..20)) {
        prop_assert_eq!(parse_membership(&membership_to_string(&m, 5)).unwrap(), m);
    }

    #[test]
    fn corpus_round_trip(c in corpus()) {
        prop_assert_eq!(parse_corpus(&corpus_to_string(&c)).unwrap(), c);
    }

    #[test]
    fn model_round_trip(c in corpus(), l2 in 0.001..1.0f64) {
        let model = train(&c, &SymbolSpace::from_corpus(&c), &TrainConfig { l2, epochs: 5, ..TrainConfig::default() }).unwrap();
        prop_assert_eq!(parse_model(&model_to_string(&model)).unwrap(), model);
    }
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let g = KinematicGraph { parts: vec![0], labels: Default::default(), edges: vec![] };
    let path = dir.path().join("g.json");
    save_graph(&path, &g, GraphFormat::Json).unwrap();
    assert_eq!(load_graph(&path).unwrap(), g);
    let missing = dir.path().join("nope.json");
    let err = load_graph(&missing).unwrap_err();
    assert!(err.is_io());
    assert!(err.to_string().contains("nope.json"));
}

#[test]
fn shipped_corpus_loads() {
    let corpus = load_corpus(std::path::Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/data/toy_corpus.json"))).unwrap();
    assert_eq!(corpus.len(), 21);
}
