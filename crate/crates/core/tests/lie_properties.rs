use legodom::lie::{adjoint, exp_se3, exp_so3, log_se3, log_so3, right_jacobian_se3, Pose, Twist};
use nalgebra::{Vector3, Vector6};
use proptest::prelude::*;

fn vec3(bound: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-bound..bound).prop_map(Vector3::from)
}

/// Rotation angle stays below 3 rad, inside the principal branch.
fn twist() -> impl Strategy<Value = Vector6<f64>> {
    (vec3(1.7), vec3(5.0)).prop_map(|(w, v)| {
        let mut x = Vector6::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&w);
        x.fixed_rows_mut::<3>(3).copy_from(&v);
        x
    })
}

fn pose() -> impl Strategy<Value = Pose> {
    twist().prop_map(|x| exp_se3(&Twist::from_vector(&x), 1.0))
}

fn pose_distance(a: &Pose, b: &Pose) -> f64 {
    (a.rotation.matrix() - b.rotation.matrix()).abs().max() + (a.translation - b.translation).abs().max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn so3_log_inverts_exp(w in vec3(1.7)) {
        let back = log_so3(&exp_so3(&w)).unwrap();
        prop_assert!((back - w).norm() < 1e-9);
    }

    #[test]
    fn se3_log_inverts_exp(x in twist()) {
        let back = log_se3(&exp_se3(&Twist::from_vector(&x), 1.0)).unwrap().to_vector();
        prop_assert!((back - x).norm() < 1e-9);
    }

    #[test]
    fn exp_scales_with_time(x in twist(), dt in 0.0f64..1.0) {
        let scaled = exp_se3(&Twist::from_vector(&(x * dt)), 1.0);
        prop_assert!(pose_distance(&exp_se3(&Twist::from_vector(&x), dt), &scaled) < 1e-12);
    }

    #[test]
    fn composition_is_associative(a in pose(), b in pose(), c in pose()) {
        let left = a.compose(&b).compose(&c);
        let right = a.compose(&b.compose(&c));
        prop_assert!(pose_distance(&left, &right) < 1e-12);
    }

    #[test]
    fn between_matches_inverse_compose(a in pose(), b in pose()) {
        prop_assert!(pose_distance(&a.between(&b), &a.inverse().compose(&b)) < 1e-12);
    }

    #[test]
    fn local_inverts_retract(a in pose(), d in twist()) {
        let d = d * 0.5;
        let back = a.local(&a.retract(&d)).unwrap();
        prop_assert!((back - d).norm() < 1e-9);
    }

    #[test]
    fn adjoint_conjugates_exponential(t in pose(), x in twist()) {
        let moved = exp_se3(&Twist::from_vector(&(adjoint(&t) * x)), 1.0);
        let conjugated = t.compose(&exp_se3(&Twist::from_vector(&x), 1.0)).compose(&t.inverse());
        prop_assert!(pose_distance(&moved, &conjugated) < 1e-9);
    }

    #[test]
    fn right_jacobian_first_order(x in twist(), d in twist()) {
        let h = 1e-6;
        let d = d.normalize() * h;
        let lhs = exp_se3(&Twist::from_vector(&(x + d)), 1.0);
        let rhs = exp_se3(&Twist::from_vector(&x), 1.0).retract(&(right_jacobian_se3(&x) * d));
        // Remainder is O(h²) with a constant bounded over the sampled domain.
        prop_assert!(pose_distance(&lhs, &rhs) < 1e3 * h * h);
    }
}
