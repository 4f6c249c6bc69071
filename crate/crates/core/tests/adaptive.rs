use adampnp::adaptive::{AdaptiveParams, AdaptiveState, dynamic_weights, median_residual_variance};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn calibrated_median_recovers_gaussian_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 100_000;
    let f = vec![0.0; n];
    let y: Vec<f64> = (0..n).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    let est = median_residual_variance(&y, &f, AdaptiveParams::default().kappa).unwrap();
    assert!((est / 0.01 - 1.0).abs() < 0.03, "estimate {est}");
    // The uncalibrated median sits near 0.455 σ².
    let raw = median_residual_variance(&y, &f, 1.0).unwrap();
    assert!((raw / 0.01 - 0.4549).abs() < 0.02);
}

/// Sorting-based median for comparison with the selection-based one.
fn sorted_median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) }
}

proptest! {
    #[test]
    fn median_matches_sorting(r in prop::collection::vec(-10.0f64..10.0, 1..60)) {
        let sq: Vec<f64> = r.iter().map(|v| v * v).collect();
        let got = median_residual_variance(&r, &vec![0.0; r.len()], 1.0).unwrap();
        prop_assert_eq!(got, sorted_median(&sq));
    }

    #[test]
    fn weights_sum_to_count(s in prop::collection::vec(0.0f64..1e3, 1..6), eps in 1e-9f64..1e-2) {
        let w = dynamic_weights(&s, eps);
        prop_assert!((w.iter().sum::<f64>() - s.len() as f64).abs() < 1e-9);
        prop_assert!(w.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn weights_permute_with_inputs(s in prop::collection::vec(1e-4f64..10.0, 2..6), rot in 0usize..6) {
        let k = rot % s.len();
        let mut t = s.clone();
        t.rotate_left(k);
        let mut w = dynamic_weights(&s, 1e-6);
        w.rotate_left(k);
        let wt = dynamic_weights(&t, 1e-6);
        for (a, b) in w.iter().zip(&wt) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_ignore_common_scale(s in prop::collection::vec(1e-4f64..10.0, 1..6), c in 1e-3f64..1e3) {
        let eps = 1e-6;
        // Scale σ̂² + ε as a whole.
        let scaled: Vec<f64> = s.iter().map(|v| c * (v + eps) - eps).collect();
        let a = dynamic_weights(&s, eps);
        let b = dynamic_weights(&scaled, eps);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn weight_decreases_with_own_variance(
        s in prop::collection::vec(1e-3f64..10.0, 2..5),
        bump in 1e-3f64..5.0,
    ) {
        let mut t = s.clone();
        t[0] += bump;
        prop_assert!(dynamic_weights(&t, 1e-6)[0] < dynamic_weights(&s, 1e-6)[0]);
    }

    #[test]
    fn estimate_never_below_floor(
        updates in prop::collection::vec((0.0f64..2.0, 0.0f64..=1.0, 0.0f64..1.0), 1..40),
        lip in 0.0f64..20.0,
    ) {
        let params = AdaptiveParams::default();
        let mut st = AdaptiveState::new(params, &[lip]).unwrap();
        for (s, t, tau) in updates {
            let v = st.bias_corrected_update(0, s, t, tau).unwrap();
            prop_assert!(v >= params.epsilon);
        }
    }
}
