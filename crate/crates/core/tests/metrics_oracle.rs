mod common;

use proptest::prelude::*;
use ypose::metrics::Accumulator;
use ypose::train::cross_entropy_value;
use ypose::Tensor;

fn compare(n: usize, classes: usize, seed: u64) {
    let (rows, targets) = common::random_predictions(n, classes, seed);
    let mut acc = Accumulator::new(classes);
    for (row, &t) in rows.iter().zip(&targets) {
        acc.add(row, t);
    }
    let m = acc.finish();
    let o = common::metrics_oracle(&rows, &targets, classes);
    for (name, got, want) in [("top1", m.top1, o.top1), ("top5", m.top5, o.top5), ("precision", m.precision, o.precision), ("recall", m.recall, o.recall), ("f1", m.f1, o.f1)] {
        assert!((got - want).abs() < 1e-9, "{name}: {got} vs {want}");
    }
    assert_eq!(m.confusion, o.confusion);
    assert_eq!(m.confusion_trace() as f64 / n as f64, m.top1);
}

#[test]
fn two_hundred_pairs_over_seven_classes() {
    compare(200, 7, 1);
}

#[test]
fn one_thousand_pairs_over_twelve_classes() {
    compare(1000, 12, 2);
}

#[test]
fn uniform_prediction_loss_is_log_class_count() {
    let heads = [6usize, 20, 82];
    let weights = [1.0, 0.5, 2.0];
    let probs: Vec<Tensor> = heads.iter().map(|&c| Tensor::full(&[4, c], 1.0 / c as f64)).collect();
    let targets: Vec<Vec<usize>> = heads.iter().map(|&c| vec![0, c - 1, c / 2, 1]).collect();
    let loss = cross_entropy_value(&probs.iter().collect::<Vec<_>>(), &targets.iter().map(Vec::as_slice).collect::<Vec<_>>(), &weights);
    let expected: f64 = heads.iter().zip(weights).map(|(&c, w)| w * (c as f64).ln()).sum();
    assert!((loss - expected).abs() < 1e-9, "{loss} vs {expected}");
}

proptest! {
    #[test]
    fn rates_are_ordered_and_bounded(n in 1usize..80, classes in 2usize..10, seed in any::<u64>()) {
        let (rows, targets) = common::random_predictions(n, classes, seed);
        let mut acc = Accumulator::new(classes);
        for (row, &t) in rows.iter().zip(&targets) {
            acc.add(row, t);
        }
        let m = acc.finish();
        prop_assert!(m.top5 >= m.top1);
        for v in [m.top1, m.top5, m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(m.confusion_trace() as f64 / n as f64, m.top1);
    }
}
