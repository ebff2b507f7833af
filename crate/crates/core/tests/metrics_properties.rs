use legodom::eval::metrics::{compute_ate, compute_rte, Trajectory, RTE_SEGMENT_LENGTH};
use legodom::lie::{exp_se3, Pose, Rotation, Twist};
use nalgebra::{Vector3, Vector6};
use proptest::prelude::*;

/// A curving 20 s walk at 10 Hz with small per-step deviations.
fn walk(noise: &[f64]) -> Trajectory {
    let mut pose = Pose::identity();
    let mut pairs = Vec::new();
    for (k, n) in noise.iter().enumerate() {
        pairs.push((k as f64 * 0.1, pose));
        let xi = Twist::new(Vector3::new(0.0, 0.01 * n, 0.2 + 0.1 * n), Vector3::new(0.5 + 0.05 * n, 0.02 * n, 0.0));
        pose = pose.compose(&exp_se3(&xi, 0.1));
    }
    Trajectory::from_pairs(pairs).unwrap()
}

fn rigid() -> impl Strategy<Value = Pose> {
    (prop::array::uniform3(-1.5f64..1.5), prop::array::uniform3(-20.0f64..20.0)).prop_map(|(w, t)| {
        let mut x = Vector6::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&Vector3::from(w));
        Pose::new(exp_se3(&Twist::from_vector(&x), 1.0).rotation, Vector3::from(t))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ate_is_invariant_to_a_rigid_offset(
        truth_noise in prop::collection::vec(-1.0f64..1.0, 200),
        est_noise in prop::collection::vec(-1.0f64..1.0, 200),
        g in rigid(),
    ) {
        let truth = walk(&truth_noise);
        let est = walk(&est_noise);
        let a = compute_ate(&est, &truth).unwrap().stats;
        let b = compute_ate(&est.transformed(&g), &truth).unwrap().stats;
        prop_assert!((a.rmse - b.rmse).abs() < 1e-9 * (1.0 + a.rmse));
        prop_assert!((a.mean - b.mean).abs() < 1e-9 * (1.0 + a.mean));
    }

    #[test]
    fn rte_is_invariant_to_a_rigid_offset(
        truth_noise in prop::collection::vec(-1.0f64..1.0, 200),
        est_noise in prop::collection::vec(-1.0f64..1.0, 200),
        g in rigid(),
    ) {
        let truth = walk(&truth_noise);
        let est = walk(&est_noise);
        let a = compute_rte(&est, &truth, RTE_SEGMENT_LENGTH).unwrap();
        let b = compute_rte(&est.transformed(&g), &truth, RTE_SEGMENT_LENGTH).unwrap();
        prop_assert!((a.translation.mean - b.translation.mean).abs() < 1e-9);
        prop_assert!((a.rotation.mean - b.rotation.mean).abs() < 1e-7);
    }

    #[test]
    fn identical_trajectories_have_no_error(noise in prop::collection::vec(-1.0f64..1.0, 200), g in rigid()) {
        let truth = walk(&noise);
        let ate = compute_ate(&truth.transformed(&g), &truth).unwrap().stats;
        prop_assert!(ate.max < 1e-9);
        let rte = compute_rte(&truth, &truth, RTE_SEGMENT_LENGTH).unwrap();
        prop_assert!(rte.translation.max < 1e-12);
    }
}

#[test]
fn constant_offset_is_aligned_away_but_scale_is_not() {
    let noise = vec![0.0; 200];
    let truth = walk(&noise);
    let shifted = truth.transformed(&Pose::new(Rotation::from_yaw(0.3), Vector3::new(4.0, -2.0, 1.0)));
    assert!(compute_ate(&shifted, &truth).unwrap().stats.max < 1e-9);

    // Stretching the path by 10 % leaves a residual no rigid alignment removes.
    let stretched = Trajectory::from_pairs(
        truth
            .stamps()
            .iter()
            .zip(truth.poses())
            .map(|(&t, p)| (t, Pose::new(p.rotation, p.translation * 1.1))),
    )
    .unwrap();
    assert!(compute_ate(&stretched, &truth).unwrap().stats.rmse > 0.05);
    let rte = compute_rte(&stretched, &truth, RTE_SEGMENT_LENGTH).unwrap();
    assert!((rte.translation.mean - 0.1).abs() < 0.02, "{:?}", rte.translation);
}
