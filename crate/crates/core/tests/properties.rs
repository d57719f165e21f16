use proptest::prelude::*;

use quantile_lstm::detectors::{iqr_verdicts, median_verdicts, quantile_verdicts, Observation};
use quantile_lstm::evaluation::{probability_bound, score};
use quantile_lstm::lstm::{train, Activation, LstmModel, ModelConfig, TrainConfig};
use quantile_lstm::series::{normalize, parse_csv, to_csv_string, CsvSchema, SeriesPoint, TimeSeries};
use quantile_lstm::windowing::{sample_quantile, training_pairs, WindowConfig};
use quantile_lstm::MatchPolicy;

/// Order-statistic interpolation written from scratch: position
/// `tau * (n - 1)` in the sorted sample, linear between neighbours.
fn brute_quantile(data: &[f64], tau: f64) -> f64 {
    let mut s = data.to_vec();
    for i in 0..s.len() {
        for j in 0..s.len() - 1 - i {
            if s[j] > s[j + 1] {
                s.swap(j, j + 1);
            }
        }
    }
    let h = tau * (s.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3..1e3f64, 1..=50)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn quantile_matches_brute_force(data in sample(), tau in 0.0..=1.0f64) {
        let q = sample_quantile(&data, tau).unwrap();
        let b = brute_quantile(&data, tau);
        prop_assert!((q - b).abs() <= 1e-12 * b.abs().max(1.0), "{q} vs {b}");
    }

    #[test]
    fn quantile_monotone_and_bounded(data in sample(), a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let (t1, t2) = if a <= b { (a, b) } else { (b, a) };
        let q1 = sample_quantile(&data, t1).unwrap();
        let q2 = sample_quantile(&data, t2).unwrap();
        let min = data.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(q1 <= q2);
        prop_assert!(min <= q1 && q2 <= max);
    }

    #[test]
    fn quantile_affine_equivariance(data in sample(), tau in 0.0..=1.0f64, a in 0.01..10.0f64, b in -100.0..100.0f64) {
        let shifted: Vec<f64> = data.iter().map(|x| a * x + b).collect();
        let lhs = sample_quantile(&shifted, tau).unwrap();
        let rhs = a * sample_quantile(&data, tau).unwrap() + b;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
    }

    #[test]
    fn activation_gradients_match_differences(x in -20.0..20.0f64, alpha in 0.1..4.0f64) {
        let h = 1e-6;
        for act in [Activation::sigmoid(), Activation::tanh(), Activation::elliot(), Activation::param_elliot(alpha)] {
            let fd = (act.eval(x + h) - act.eval(x - h)) / (2.0 * h);
            prop_assert!((act.grad(x) - fd).abs() <= 1e-6, "{:?} at {x}", act.kind);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn windows_partition_each_period(w in 1usize..6, m in 1usize..6, extra in 1usize..20, k_off in 0usize..10) {
        let cfg = WindowConfig::new(w * m, w).unwrap();
        let n = w * m + extra;
        prop_assert_eq!(cfg.pair_count(n), extra);
        let k = k_off % extra;
        let ranges: Vec<_> = cfg.windows(k).collect();
        prop_assert_eq!(ranges.len(), w);
        let covered: Vec<usize> = ranges.into_iter().flatten().collect();
        prop_assert_eq!(covered, (k..k + w * m).collect::<Vec<_>>());
    }

    #[test]
    fn training_pairs_follow_the_layout(values in prop::collection::vec(-5.0..5.0f64, 10..40), tau in 0.05..0.95f64) {
        let cfg = WindowConfig::new(6, 3).unwrap();
        let set = training_pairs(&values, &cfg, tau).unwrap();
        prop_assert_eq!(set.len(), values.len() - 6);
        for (row, (&k, label)) in set.origin_indices.iter().zip(&set.labels).enumerate() {
            for (j, r) in cfg.windows(k).enumerate() {
                prop_assert_eq!(set.inputs[row][j], brute_quantile(&values[r], tau));
            }
            prop_assert_eq!(*label, brute_quantile(&values[k + 1..=k + 6], tau));
        }
    }

    #[test]
    fn normalization_round_trips(values in prop::collection::vec(-1e6..1e6f64, 2..60)) {
        prop_assume!(values.iter().any(|v| *v != values[0]));
        let s = TimeSeries::from_values("p", &values).unwrap();
        let norm = normalize(&s).unwrap();
        let params = norm.normalization().unwrap();
        for (orig, y) in values.iter().zip(norm.values()) {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&y));
            let back = params.invert(y);
            prop_assert!((back - orig).abs() <= 1e-12 * (params.max - params.min).max(1.0), "{orig} -> {back}");
        }
    }

    #[test]
    fn csv_round_trips(values in prop::collection::vec(-1e9..1e9f64, 1..40), labels in prop::collection::vec(any::<Option<bool>>(), 40)) {
        let pts: Vec<SeriesPoint> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| SeriesPoint { timestamp: 100 + 3 * i as i64, value: v, is_anomaly: labels[i] })
            .collect();
        let s = TimeSeries::new("rt", pts).unwrap();
        let schema = CsvSchema::yahoo();
        let text = to_csv_string(&s, &schema).unwrap();
        let back = parse_csv("rt", &text, &schema).unwrap();
        prop_assert_eq!(back.points(), s.points());
    }

    #[test]
    fn quantile_band_flags_grow_with_severity(
        obs in prop::collection::vec(-10.0..10.0f64, 1..30),
        width in 0.1..5.0f64,
        bump in 0.0..5.0f64,
    ) {
        let observations: Vec<Observation> = obs.iter().copied().enumerate().collect();
        let low = vec![-width; obs.len()];
        let high = vec![width; obs.len()];
        let (base, _) = quantile_verdicts(&observations, &low, &high).unwrap();
        let pushed: Vec<Observation> = obs
            .iter()
            .enumerate()
            .map(|(i, &x)| (i, if x > width { x + bump } else if x < -width { x - bump } else { x }))
            .collect();
        let (more, _) = quantile_verdicts(&pushed, &low, &high).unwrap();
        for (a, b) in base.iter().zip(&more) {
            prop_assert!(!a.is_anomaly || b.is_anomaly);
        }
    }

    #[test]
    fn crossed_bands_are_repaired(lo in -5.0..5.0f64, hi in -5.0..5.0f64, x in -10.0..10.0f64) {
        let (v, repairs) = quantile_verdicts(&[(0, x)], &[lo], &[hi]).unwrap();
        prop_assert_eq!(repairs, usize::from(lo > hi));
        prop_assert!(v[0].predicted_low.unwrap() <= v[0].predicted_high.unwrap());
        prop_assert_eq!(v[0].is_anomaly, x > lo.max(hi) || x < lo.min(hi));
    }

    #[test]
    fn iqr_flags_shrink_as_multiplier_grows(
        obs in prop::collection::vec(-10.0..10.0f64, 1..30),
        k1 in 0.5..3.0f64,
        dk in 0.0..3.0f64,
    ) {
        let n = obs.len();
        let observations: Vec<Observation> = obs.iter().copied().enumerate().collect();
        let (q25, med, q75) = (vec![-1.0; n], vec![0.2; n], vec![1.0; n]);
        let (a, _) = iqr_verdicts(&observations, &q25, &med, &q75, k1).unwrap();
        let (b, _) = iqr_verdicts(&observations, &q25, &med, &q75, k1 + dk).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(!y.is_anomaly || x.is_anomaly);
        }
    }

    #[test]
    fn wider_median_thresholds_flag_a_subset(
        obs in prop::collection::vec(-10.0..10.0f64, 2..40),
        med in prop::collection::vec(-1.0..1.0f64, 40),
        block in 1usize..10,
    ) {
        let observations: Vec<Observation> = obs.iter().copied().enumerate().collect();
        let median = &med[..obs.len()];
        let (w2, _) = median_verdicts(&observations, median, block, 2.0).unwrap();
        let (w3, _) = median_verdicts(&observations, median, block, 3.0).unwrap();
        for (a, b) in w2.iter().zip(&w3) {
            prop_assert!(!b.is_anomaly || a.is_anomaly);
        }
    }

    #[test]
    fn probability_bound_is_monotone_and_additive(
        values in prop::collection::vec(-100.0..100.0f64, 20..80),
        flags in prop::collection::vec(prop::bool::weighted(0.2), 80),
    ) {
        let pts: Vec<SeriesPoint> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| SeriesPoint::labeled(i as i64, v, flags[i]))
            .collect();
        let s = TimeSeries::new("pb", pts).unwrap();
        let row = probability_bound(&s, 0.9, 0.1).unwrap();
        let a = |t| row.above(t).unwrap().per_point;
        let b = |t| row.below(t).unwrap().per_point;
        prop_assert!(a(0.95) <= a(0.9) && a(0.9) <= a(0.75));
        prop_assert!(b(0.10) <= b(0.25));
        prop_assert_eq!(row.p_anomaly, a(0.9) + b(0.10));
        prop_assert_eq!(row.union_count, row.above(0.9).unwrap().count + row.below(0.10).unwrap().count);
    }

    #[test]
    fn score_ignores_verdict_order(
        truth_flags in prop::collection::vec(any::<bool>(), 5..40),
        pred_flags in prop::collection::vec(any::<bool>(), 40),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let n = truth_flags.len();
        let pts: Vec<SeriesPoint> = (0..n).map(|i| SeriesPoint::labeled(i as i64, 0.0, truth_flags[i])).collect();
        let truth = TimeSeries::new("perm", pts).unwrap();
        let (verdicts, _) = quantile_verdicts(
            &(0..n).map(|i| (i, if pred_flags[i] { 2.0 } else { 0.0 })).collect::<Vec<_>>(),
            &vec![-1.0; n],
            &vec![1.0; n],
        )
        .unwrap();
        let mut shuffled = verdicts.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(
            score(&verdicts, &truth, MatchPolicy::ExactIndex).unwrap(),
            score(&shuffled, &truth, MatchPolicy::ExactIndex).unwrap()
        );
    }
}

#[test]
fn saturation_ordering_on_tails() {
    let pef = Activation::param_elliot(1.0);
    for i in 0..=500 {
        let m = 5.0 + 5.0 * i as f64 / 500.0;
        for x in [m, -m] {
            assert!(pef.grad(x) > Activation::sigmoid().grad(x), "sigmoid at {x}");
            assert!(pef.grad(x) > Activation::tanh().grad(x), "tanh at {x}");
        }
    }
}

#[test]
fn slope_at_origin_is_alpha() {
    for alpha in [0.1, 0.5, 1.0, 1.5, 2.75, 10.0] {
        assert_eq!(Activation::param_elliot(alpha).grad(0.0), alpha);
    }
}

#[test]
fn training_is_bit_reproducible() {
    let values: Vec<f64> = (0..80).map(|i| (i as f64 * 0.3).sin() * 0.4 + 0.5).collect();
    let set = training_pairs(&values, &WindowConfig::default(), 0.9).unwrap();
    for activation in [Activation::elliot(), Activation::param_elliot(1.5)] {
        let cfg = TrainConfig {
            epochs: 40,
            seed: 11,
            record_traces: true,
            model: ModelConfig { hidden_size: 6, cell_activation: activation, ..Default::default() },
            ..Default::default()
        };
        let run = || {
            let init = LstmModel::init(&cfg.model, cfg.seed).unwrap();
            train(&init, &set, &cfg).unwrap()
        };
        let (a, ta) = run();
        let (b, tb) = run();
        let bits = |m: &LstmModel| m.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(ta, tb);
    }
}
