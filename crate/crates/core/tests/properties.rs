use ace_cert::curve::{log_grid, CumulativeRobustnessCurve, CurveEntry, EntryMethod};
use ace_cert::distribution::PerturbationBall;
use ace_cert::model::{is_violation, Label, ScoreVector};
use ace_cert::normal::{log_upper_tail, upper_tail};
use ace_cert::pac::pac_sample_size;
use ace_cert::rng::{Domain, SeedStream};
use proptest::prelude::*;

fn entry() -> impl Strategy<Value = CurveEntry> {
    prop_oneof![
        (-60.0..0.0f64, 0.0..5.0f64).prop_map(|(mu, s)| CurveEntry::new(mu, s, EntryMethod::Predicted)),
        (-60.0..0.0f64).prop_map(|mu| CurveEntry::new(mu, 0.0, EntryMethod::Amls)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn curve_is_bounded_and_monotone(entries in prop::collection::vec(entry(), 1..40),
                                     mut ts in prop::collection::vec(1e-30..1.0f64, 2..20)) {
        let curve = CumulativeRobustnessCurve::new(entries);
        ts.sort_by(f64::total_cmp);
        let values: Vec<f64> = ts.iter().map(|&t| curve.evaluate(t).unwrap()).collect();
        prop_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(values.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        prop_assert!(curve.evaluate(0.0).is_err());
    }

    #[test]
    fn ball_draws_stay_inside(center in prop::collection::vec(-0.5..0.5f64, 1..6),
                              r in 1e-6..2.0f64, seed in any::<u64>()) {
        let ball = PerturbationBall::new(center, r).unwrap().with_domain(-1.0, 1.0).unwrap();
        let mut rng = SeedStream::new(seed).rng(Domain::Ball, 0);
        for _ in 0..20 {
            prop_assert!(ball.contains(&ball.sample(&mut rng)));
        }
    }

    #[test]
    fn log_grid_is_increasing(lo_exp in -30.0..-1.0f64, span in 0.1..1.0f64, points in 2usize..200) {
        let lo = 10f64.powf(lo_exp);
        let hi = 10f64.powf(lo_exp + span * -lo_exp);
        let grid = log_grid(lo, hi, points).unwrap();
        prop_assert_eq!(grid.len(), points);
        prop_assert!(grid.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(*grid.last().unwrap(), hi);
    }

    #[test]
    fn pac_size_shrinks_with_looser_targets(e in 1e-3..0.5f64, d in 1e-6..0.5f64, f in 1.0..4.0f64) {
        let n = pac_sample_size(e, d).unwrap();
        prop_assert!(pac_sample_size((e * f).min(1.0), d).unwrap() <= n);
        prop_assert!(pac_sample_size(e, (d * f).min(0.99)).unwrap() <= n);
        prop_assert!(2.0 * (-2.0 * n as f64 * e * e).exp() <= d * (1.0 + 1e-12));
    }

    #[test]
    fn margin_sign_matches_argmax(scores in prop::collection::vec(-10.0..10.0f64, 2..8)) {
        let y = ScoreVector::new(scores.clone()).unwrap();
        let top = y.argmax();
        prop_assert!(scores[..top.0].iter().all(|&v| v < scores[top.0]));
        prop_assert!(!is_violation(y.margin_against(top)) || scores.iter().filter(|&&v| v == scores[top.0]).count() > 1);
        for i in 0..scores.len() {
            let h = y.margin_against(Label(i));
            prop_assert_eq!(is_violation(h), y.argmax() != Label(i) || h == 0.0);
        }
    }

    #[test]
    fn normal_tail_is_decreasing(a in -30.0..30.0f64, d in 1e-6..5.0f64) {
        prop_assert!(upper_tail(a + d) <= upper_tail(a));
        prop_assert!(log_upper_tail(a + d) < log_upper_tail(a));
    }
}
