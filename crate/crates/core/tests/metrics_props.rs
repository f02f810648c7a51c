mod common;

use common::*;
use leadtime::metrics::{mae_pred, mae_true, MetricAccumulator, MetricsConfig, PredRule};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const R: usize = 16;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pred_buckets_partition_the_frames(seed in any::<u64>(), n in 1usize..1500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = random_labels(&mut rng, n, 2.0);
        let pred = random_predictions(&mut rng, &labels, R);
        let map = mae_pred(&pred, &labels.tau, R).unwrap();
        prop_assert_eq!(map.values().map(|s| s.count).sum::<u64>(), n as u64);
        prop_assert!(map.values().all(|s| s.sum >= 0.0));
    }

    #[test]
    fn matches_reference(seed in any::<u64>(), n in 1usize..800) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = random_labels(&mut rng, n, 2.0);
        let pred = random_predictions(&mut rng, &labels, R);
        let got = mae_true(&pred, &labels, R).unwrap();
        let (err, mean) = mae_true_reference(&pred, &labels, R);
        let as_sums = |m: &leadtime::metrics::BucketMap| -> Vec<(i64, u64)> { m.iter().map(|(k, s)| (*k, s.count)).collect() };
        prop_assert_eq!(as_sums(&got.error), err.iter().map(|e| (e.0, e.2)).collect::<Vec<_>>());
        prop_assert_eq!(as_sums(&got.prediction), mean.iter().map(|e| (e.0, e.2)).collect::<Vec<_>>());
        for (k, s, c) in err {
            prop_assert!((got.error[&k].mean() - s / c as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_predictor_scores_zero(seed in any::<u64>(), n in 1usize..1500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = random_labels(&mut rng, n, 2.0);
        let pred = mae_pred(&labels.tau, &labels.tau, R).unwrap();
        prop_assert!(pred.values().all(|s| s.sum == 0.0));
        // Before the initiation the truth is the label itself.
        let truth = mae_true(&labels.tau, &labels, R).unwrap();
        prop_assert!(truth.error.range(0..).all(|(_, s)| s.sum == 0.0));
    }

    #[test]
    fn segment_order_does_not_matter(seed in any::<u64>(), segments in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts: Vec<_> = (0..segments)
            .map(|_| {
                let labels = random_labels(&mut rng, 1200, 2.0);
                let pred = random_predictions(&mut rng, &labels, R);
                (pred, labels)
            })
            .collect();
        let run = |order: &[usize]| {
            let mut acc = MetricAccumulator::new(MetricsConfig::default());
            for &i in order {
                acc.add_segment(&parts[i].0, &parts[i].1).unwrap();
            }
            acc.report(PredRule::Range).unwrap()
        };
        let mut order: Vec<usize> = (0..segments).collect();
        let a = run(&order);
        order.shuffle(&mut rng);
        let b = run(&order);
        prop_assert!((a.mmae - b.mmae).abs() < 1e-12);
        prop_assert!((a.mmae - a.mmae_true - a.mmae_pred).abs() < 1e-15);
        prop_assert_eq!(a.frames, b.frames);
        for (x, y) in a.mae_true.iter().zip(&b.mae_true).chain(a.mae_pred.iter().zip(&b.mae_pred)) {
            prop_assert_eq!(x.count, y.count);
            prop_assert!((x.value - y.value).abs() < 1e-12);
            prop_assert!(x.value >= 0.0);
        }
    }

    #[test]
    fn merged_accumulators_equal_one_pass(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts: Vec<_> = (0..4)
            .map(|_| {
                let labels = random_labels(&mut rng, 900, 2.0);
                (random_predictions(&mut rng, &labels, R), labels)
            })
            .collect();
        let mut whole = MetricAccumulator::new(MetricsConfig::default());
        let mut left = MetricAccumulator::new(MetricsConfig::default());
        let mut right = MetricAccumulator::new(MetricsConfig::default());
        for (i, (p, l)) in parts.iter().enumerate() {
            whole.add_segment(p, l).unwrap();
            if i < 2 { left.add_segment(p, l).unwrap() } else { right.add_segment(p, l).unwrap() }
        }
        left.merge(&right);
        prop_assert_eq!(left.frames, whole.frames);
        let (a, b) = (left.report(PredRule::Range).unwrap(), whole.report(PredRule::Range).unwrap());
        prop_assert!((a.mmae - b.mmae).abs() < 1e-12);
    }
}
