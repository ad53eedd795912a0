mod common;

use artikin_core::geometry::{align_point_sets, ransac_align, rms_residual, GeometryError, Pose, RansacConfig, Vec3};
use common::{arb_pose, poses_close};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn inverse_composes_to_identity(p in arb_pose()) {
        prop_assert!(poses_close(&p.compose(&p.inverse()), &Pose::identity(), 1e-9));
        prop_assert!(poses_close(&p.inverse().compose(&p), &Pose::identity(), 1e-9));
    }

    #[test]
    fn composition_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
        prop_assert!(poses_close(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c)), 1e-9));
    }

    #[test]
    fn quaternion_sign_is_canonical(p in arb_pose()) {
        let q = p.wxyz();
        let first = q.iter().find(|c| **c != 0.0).unwrap();
        prop_assert!(*first > 0.0);
        let flipped = Pose::from_wxyz([-q[0], -q[1], -q[2], -q[3]], *p.translation());
        prop_assert_eq!(flipped.wxyz(), q);
    }

    #[test]
    fn alignment_is_left_invariant(g in arb_pose(), p in arb_pose(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = random_points(&mut rng, 12);
        let dst: Vec<Vec3> = src
            .iter()
            .map(|x| p.transform_point(x) + Vec3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), 0.0))
            .collect();
        let base = align_point_sets(&src, &dst).unwrap();
        let gs: Vec<Vec3> = src.iter().map(|x| g.transform_point(x)).collect();
        let gd: Vec<Vec3> = dst.iter().map(|x| g.transform_point(x)).collect();
        let moved = align_point_sets(&gs, &gd).unwrap();
        let conj = g.compose(&base).compose(&g.inverse());
        prop_assert!(poses_close(&moved, &conj, 1e-9));
        prop_assert!((rms_residual(&moved, &gs, &gd) - rms_residual(&base, &src, &dst)).abs() <= 1e-9);
    }

    #[test]
    fn ransac_is_reproducible(p in arb_pose(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = random_points(&mut rng, 20);
        let mut dst: Vec<Vec3> = src.iter().map(|x| p.transform_point(x)).collect();
        dst[3] += Vec3::new(1.0, 0.0, 0.0);
        let cfg = RansacConfig { seed, ..Default::default() };
        let a = ransac_align(&src, &dst, &cfg).unwrap();
        let b = ransac_align(&src, &dst, &cfg).unwrap();
        prop_assert_eq!(a.0.wxyz(), b.0.wxyz());
        prop_assert_eq!(a.0.translation(), b.0.translation());
        prop_assert_eq!(a.1, b.1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rotation_determinant_is_one(seed in any::<u64>(), reflect in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = random_points(&mut rng, 6);
        let dst: Vec<Vec3> = if reflect {
            src.iter().map(|x| Vec3::new(-x.x, x.y, x.z)).collect()
        } else {
            random_points(&mut rng, 6)
        };
        let p = align_point_sets(&src, &dst).unwrap();
        prop_assert!((p.rotation_matrix().determinant() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn recovers_generating_pose_from_50_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.3).normalize();
        let truth = Pose::from_translation(Vec3::new(0.3, -1.2, 2.0)).compose(&Pose::from_axis_angle(&axis, rng.random_range(-3.0..3.0)));
        let src = random_points(&mut rng, 50);
        let dst: Vec<Vec3> = src.iter().map(|x| truth.transform_point(x)).collect();
        assert!(poses_close(&align_point_sets(&src, &dst).unwrap(), &truth, 1e-9));
    }
}

#[test]
fn ransac_mask_excludes_exactly_the_outliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth = Pose::from_axis_angle(&Vec3::new(0.0, 1.0, 1.0).normalize(), 0.7);
    let src = random_points(&mut rng, 40);
    let outlier: Vec<bool> = (0..40).map(|k| k % 10 < 3).collect();
    let dst: Vec<Vec3> = src
        .iter()
        .zip(&outlier)
        .map(|(x, o)| {
            let y = truth.transform_point(x);
            if *o {
                let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                y + d.normalize()
            } else {
                y
            }
        })
        .collect();
    let cfg = RansacConfig { iterations: 200, inlier_threshold: 0.01, seed: 1 };
    let (pose, mask) = ransac_align(&src, &dst, &cfg).unwrap();
    let expected: Vec<bool> = outlier.iter().map(|o| !o).collect();
    assert_eq!(mask, expected);
    assert!(poses_close(&pose, &truth, 1e-9));
}

#[test]
fn ransac_without_outliers_matches_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let truth = Pose::from_translation(Vec3::new(0.1, 0.2, 0.3));
    let src = random_points(&mut rng, 15);
    let dst: Vec<Vec3> = src.iter().map(|x| truth.transform_point(x) + Vec3::new(rng.random_range(-0.002..0.002), 0.0, 0.0)).collect();
    let (r, mask) = ransac_align(&src, &dst, &RansacConfig::default()).unwrap();
    assert!(mask.iter().all(|m| *m));
    assert!(poses_close(&r, &align_point_sets(&src, &dst).unwrap(), 1e-6));
}

#[test]
fn two_points_have_no_consensus() {
    let p = [Vec3::zeros(), Vec3::x()];
    assert!(matches!(ransac_align(&p, &p, &RansacConfig::default()), Err(GeometryError::NoConsensus { .. })));
}
