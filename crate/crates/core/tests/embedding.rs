use legodom::eval::analysis::{embed_online_params, embed_sessions, path_length, Pca};
use legodom::Error;
use proptest::prelude::*;

fn line(start: &[f64], direction: &[f64], steps: usize) -> Vec<Vec<f64>> {
    (0..steps)
        .map(|k| start.iter().zip(direction).map(|(s, d)| s + k as f64 * d).collect())
        .collect()
}

#[test]
fn collinear_drift_embeds_on_the_first_axis() {
    let dir: Vec<f64> = (0..168).map(|i| ((i * 37 % 11) as f64 - 5.0) * 1e-3).collect();
    let start: Vec<f64> = (0..168).map(|i| (i as f64).sin()).collect();
    let history = line(&start, &dir, 50);
    let points = embed_online_params(&history).unwrap();
    let step = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    for (k, p) in points.iter().enumerate() {
        assert!(p[1].abs() < 1e-9, "second coordinate {}", p[1]);
        let expected = (k as f64 - 24.5) * step;
        assert!((p[0].abs() - expected.abs()).abs() < 1e-9);
    }
    assert!((path_length(&points) - 49.0 * step).abs() < 1e-9);
}

#[test]
fn constant_history_is_degenerate() {
    let history = vec![vec![0.25; 168]; 20];
    assert!(matches!(Pca::fit([history.as_slice()]), Err(Error::DegenerateHistory)));
}

#[test]
fn short_or_ragged_histories_are_rejected() {
    let two = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    assert!(matches!(Pca::fit([two.as_slice()]), Err(Error::InsufficientHistory { .. })));
    let ragged = vec![vec![0.0, 1.0], vec![1.0], vec![2.0, 0.0]];
    assert!(matches!(Pca::fit([ragged.as_slice()]), Err(Error::ShapeMismatch(_))));
}

#[test]
fn largest_loading_is_positive() {
    let history = line(&[0.0, 0.0, 0.0], &[0.1, -0.5, 0.2], 10);
    let pca = Pca::fit([history.as_slice()]).unwrap();
    let c = &pca.components[0];
    let lead = c.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
    assert!(lead > 0.0);
    assert!((lead - 0.5 / 0.3f64.sqrt()).abs() < 1e-12);
    assert_eq!(pca.variances[1], 0.0);
}

#[test]
fn joint_fit_shares_axes_across_sessions() {
    let a = line(&[0.0, 0.0], &[1.0, 0.0], 10);
    let b = line(&[0.0, 1.0], &[1.0, 0.0], 10);
    let out = embed_sessions(&[a, b]).unwrap();
    assert_eq!(out.len(), 2);
    // Both sessions run along the same first axis and sit apart on the second.
    assert!((out[0][9][0] - out[0][0][0] - (out[1][9][0] - out[1][0][0])).abs() < 1e-12);
    assert!((out[0][0][1] - out[1][0][1]).abs() > 0.9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_preserves_distances_in_a_plane(
        pts in prop::collection::vec(prop::array::uniform2(-5.0f64..5.0), 3..30),
        angle in 0.0f64..std::f64::consts::TAU,
        offset in prop::array::uniform4(-3.0f64..3.0),
    ) {
        // Embed planar points in 4-D through an orthonormal pair; PCA must recover them up to rotation.
        let (s, c) = angle.sin_cos();
        let u = [c, s, 0.0, 0.0];
        let v = [0.0, 0.0, c, -s];
        let history: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| (0..4).map(|i| offset[i] + p[0] * u[i] + p[1] * v[i]).collect())
            .collect();
        let Ok(points) = embed_online_params(&history) else { return Ok(()) };
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let d_in = (pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]);
                let d_out = (points[i][0] - points[j][0]).hypot(points[i][1] - points[j][1]);
                prop_assert!((d_in - d_out).abs() < 1e-8);
            }
        }
    }
}
