mod common;

use artikin_core::geometry::{Pose, RansacConfig, Vec3};
use artikin_core::posegraph::{
    estimate_trajectory, refine_trajectory, relative_transform_sequence, ClusterTrajectory, PoseGraphError, RefineConfig,
};
use artikin_core::synth::{builtin_scene, generate, JointKind, JointSpec, PartSpec, SceneSpec};
use artikin_core::track::{FeatureTrack, PoseTrajectory};
use common::{arb_pose, poses_close};
use proptest::prelude::*;

fn member_tracks<'a>(tracks: &'a [FeatureTrack], membership: &std::collections::BTreeMap<u64, u32>, part: u32) -> Vec<&'a FeatureTrack> {
    tracks.iter().filter(|t| membership.get(&t.track_id) == Some(&part)).collect()
}

/// One free-floating box turning at `rate` rad/frame about `axis`.
fn spinning(frames: usize, rate: f64, noise: f64, seed: u64) -> SceneSpec {
    SceneSpec {
        name: "spin".into(),
        parts: vec![
            PartSpec::cuboid("ground", Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.5, 0.5, 0.1)),
            PartSpec::cuboid("body", Vec3::new(0.3, 0.1, 0.2), Vec3::new(0.2, 0.15, 0.1)),
        ],
        joints: vec![JointSpec {
            parent: 0,
            child: 1,
            kind: JointKind::Rotational { axis: Vec3::new(0.0, 0.6, 0.8), pivot: Vec3::new(0.1, 0.0, 0.0) },
            rest: Pose::identity(),
            range: (0.0, rate * (frames - 1) as f64),
            profile: vec![(0, 0.0), (frames as i64 - 1, rate * (frames - 1) as f64)],
        }],
        frames,
        noise,
        seed,
        outlier_tracks: 0,
    }
}

#[test]
fn static_cluster_is_identity() {
    let scene = generate(&builtin_scene("door").unwrap()).unwrap();
    let traj = estimate_trajectory(0, &member_tracks(&scene.tracks, &scene.membership, 0), &RansacConfig::default()).unwrap();
    for (_, p) in &traj.poses {
        assert!(poses_close(p, &Pose::identity(), 1e-9));
    }
}

#[test]
fn one_degree_per_frame_reaches_ninety() {
    let scene = generate(&spinning(100, 1f64.to_radians(), 0.0, 0)).unwrap();
    let traj = estimate_trajectory(1, &member_tracks(&scene.tracks, &scene.membership, 1), &RansacConfig::default()).unwrap();
    let angle = traj.poses[90].1.rotation_angle().to_degrees();
    assert!((angle - 90.0).abs() < 1e-6, "{angle}");
}

#[test]
fn two_tracks_are_degenerate() {
    let scene = generate(&builtin_scene("door").unwrap()).unwrap();
    let two: Vec<&FeatureTrack> = scene.tracks.iter().take(2).collect();
    assert!(matches!(
        estimate_trajectory(0, &two, &RansacConfig::default()),
        Err(PoseGraphError::Geometry(_))
    ));
}

#[test]
fn zero_noise_refinement_is_a_fixed_point() {
    let scene = generate(&spinning(40, 0.02, 0.0, 0)).unwrap();
    let tracks = member_tracks(&scene.tracks, &scene.membership, 1);
    let traj = estimate_trajectory(1, &tracks, &RansacConfig::default()).unwrap();
    let out = refine_trajectory(&traj, &tracks, &RefineConfig::default()).unwrap();
    for (a, b) in traj.poses.iter().zip(&out.trajectory.poses) {
        assert!(poses_close(&a.1, &b.1, 1e-9));
    }
}

#[test]
fn single_pose_refinement_is_unchanged() {
    let traj = ClusterTrajectory {
        cluster: 0,
        anchor: Pose::identity(),
        poses: vec![(0, Pose::identity())],
        inliers: vec![],
    };
    let out = refine_trajectory(&traj, &[], &RefineConfig::default()).unwrap();
    assert_eq!(out.trajectory, traj);
}

/// Input chain with independent per-step drift: every step picks up a random
/// translation of `sigma` meters per axis.
fn drifted(traj: &ClusterTrajectory, sigma: f64, seed: u64) -> ClusterTrajectory {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    let mut out = traj.clone();
    let mut prev_true = Pose::identity();
    let mut prev_noisy = Pose::identity();
    for k in 1..traj.poses.len() {
        let step = traj.poses[k].1.compose(&prev_true.inverse());
        let kick = Pose::from_translation(Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng)));
        prev_true = traj.poses[k].1;
        prev_noisy = kick.compose(&step).compose(&prev_noisy);
        out.poses[k].1 = prev_noisy;
    }
    out
}

#[test]
fn refinement_beats_noisy_chain_on_most_seeds() {
    let mut better = 0;
    for seed in 0..100 {
        let spec = spinning(101, 0.01, 0.002, seed);
        let scene = generate(&spec).unwrap();
        let tracks = member_tracks(&scene.tracks, &scene.membership, 1);
        let chained = estimate_trajectory(1, &tracks, &RansacConfig::default()).unwrap();
        let noisy = drifted(&chained, 0.002, seed);
        let out = refine_trajectory(&noisy, &tracks, &RefineConfig::default()).unwrap();
        assert!(out.final_cost <= out.initial_cost);
        let truth = spec.part_frames(100)[1].compose(&spec.part_frames(0)[1].inverse());
        let err = |t: &ClusterTrajectory| {
            let k = t.poses.len() - 1;
            (t.poses[k].1.compose(&t.anchor).translation() - truth.compose(&t.anchor).translation()).norm()
        };
        if err(&out.trajectory) < err(&noisy) {
            better += 1;
        }
    }
    assert!(better >= 90, "refinement improved {better}/100 seeds");
}

#[test]
fn revolute_deltas_follow_generator() {
    let spec = builtin_scene("door").unwrap();
    let scene = generate(&spec).unwrap();
    let trajs: Vec<ClusterTrajectory> = (0..2)
        .map(|p| estimate_trajectory(p, &member_tracks(&scene.tracks, &scene.membership, p), &RansacConfig::default()).unwrap())
        .collect();
    let deltas = relative_transform_sequence(&trajs[0], &trajs[1]).unwrap();
    let truth = scene.truth.edges[0].params;
    for d in &deltas {
        let q = spec.joints[0].q(d.t) - spec.joints[0].q(0);
        assert!(poses_close(&d.delta, &truth.predict(q), 1e-6));
    }
}

#[test]
fn identical_trajectories_give_identity_deltas() {
    let t = PoseTrajectory {
        part_id: 0,
        poses: (0..5).map(|k| (k, Pose::from_axis_angle(&Vec3::z(), 0.1 * k as f64))).collect(),
    };
    let c = ClusterTrajectory::from_world_poses(&t);
    for d in relative_transform_sequence(&c, &c).unwrap() {
        assert!(poses_close(&d.delta, &Pose::identity(), 1e-12));
    }
}

#[test]
fn translating_part_gives_linear_deltas() {
    let still = PoseTrajectory { part_id: 0, poses: (0..10).map(|k| (k, Pose::identity())).collect() };
    let moving = PoseTrajectory {
        part_id: 1,
        poses: (0..10).map(|k| (k, Pose::from_translation(Vec3::new(0.01 * k as f64, 0.0, 0.0)))).collect(),
    };
    let d = relative_transform_sequence(&ClusterTrajectory::from_world_poses(&still), &ClusterTrajectory::from_world_poses(&moving)).unwrap();
    for r in d {
        assert!((r.delta.translation() - Vec3::new(0.01 * r.t as f64, 0.0, 0.0)).norm() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn relative_transforms_are_gauge_invariant(g in arb_pose(), poses in proptest::collection::vec((arb_pose(), arb_pose()), 2..12)) {
        let mk = |id, sel: &dyn Fn(&(Pose, Pose)) -> Pose, left: &Pose| PoseTrajectory {
            part_id: id,
            poses: poses.iter().enumerate().map(|(k, p)| (k as i64, left.compose(&sel(p)))).collect(),
        };
        let id = Pose::identity();
        let (a, b) = (mk(0, &|p| p.0, &id), mk(1, &|p| p.1, &id));
        let (ga, gb) = (mk(0, &|p| p.0, &g), mk(1, &|p| p.1, &g));
        let d = relative_transform_sequence(&ClusterTrajectory::from_world_poses(&a), &ClusterTrajectory::from_world_poses(&b)).unwrap();
        let gd = relative_transform_sequence(&ClusterTrajectory::from_world_poses(&ga), &ClusterTrajectory::from_world_poses(&gb)).unwrap();
        for (x, y) in d.iter().zip(&gd) {
            prop_assert_eq!(x.t, y.t);
            prop_assert!(poses_close(&x.delta, &y.delta, 1e-9));
        }
    }
}
