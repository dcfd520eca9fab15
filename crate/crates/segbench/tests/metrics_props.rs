use rand::Rng;
use segbench::metrics::{auc, auc_mann_whitney, roc_curve, Confusion};
use segbench::rng;

#[test]
fn trapezoid_auc_equals_mann_whitney_on_tied_sets() {
    let mut worst = 0.0f64;
    for case in 0..200u64 {
        let mut r = rng::stream(0xa0c, &[case]);
        let n = r.gen_range(10..200);
        // Quantized scores force plenty of ties, including cross-class ties.
        let levels = r.gen_range(2..12) as f64;
        let scores: Vec<f64> = (0..n)
            .map(|_| (r.gen_range(0.0..1.0f64) * levels).floor() / levels)
            .collect();
        let mut labels: Vec<f64> = (0..n).map(|_| f64::from(r.gen_range(0..2))).collect();
        // Guarantee both classes.
        labels[0] = 1.0;
        labels[1] = 0.0;

        let a = auc(&scores, &labels).unwrap();
        let b = auc_mann_whitney(&scores, &labels).unwrap();
        worst = worst.max((a - b).abs());
    }
    assert!(worst < 1e-9, "max |trapezoid - mann-whitney| = {worst:e}");
}

#[test]
fn confusion_matches_brute_force_counts() {
    for case in 0..100u64 {
        let mut r = rng::stream(0xc0f, &[case]);
        let n = 16 * 16;
        let pred: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0f64)).collect();
        let truth: Vec<f64> = (0..n).map(|_| f64::from(r.gen_range(0..2))).collect();

        let c = Confusion::from_pairs(&pred, &truth, 0.5).unwrap();
        let (mut tp, mut tn, mut fp, mut fneg) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..n {
            match (truth[i] == 1.0, pred[i] >= 0.5) {
                (true, true) => tp += 1,
                (true, false) => fneg += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
            }
        }
        assert_eq!(
            (c.true_pos, c.true_neg, c.false_pos, c.false_neg),
            (tp, tn, fp, fneg)
        );
        assert_eq!(c.total(), n as u64);
    }
}

#[test]
fn merged_confusions_equal_pooled_counts() {
    let mut r = rng::stream(0x3e6, &[]);
    let mut pooled_pred = Vec::new();
    let mut pooled_truth = Vec::new();
    let mut merged = Confusion::default();
    for _ in 0..5 {
        let n = r.gen_range(20..60);
        let pred: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0f64)).collect();
        let truth: Vec<f64> = (0..n).map(|_| f64::from(r.gen_range(0..2))).collect();
        merged.merge(&Confusion::from_pairs(&pred, &truth, 0.5).unwrap());
        pooled_pred.extend(pred);
        pooled_truth.extend(truth);
    }
    let pooled = Confusion::from_pairs(&pooled_pred, &pooled_truth, 0.5).unwrap();
    assert_eq!(merged, pooled);
}

#[test]
fn roc_is_monotone_and_anchored() {
    for case in 0..50u64 {
        let mut r = rng::stream(0x20c, &[case]);
        let n = r.gen_range(5..100);
        let scores: Vec<f64> = (0..n)
            .map(|_| (r.gen_range(0.0..1.0f64) * 8.0).floor() / 8.0)
            .collect();
        let mut labels: Vec<f64> = (0..n).map(|_| f64::from(r.gen_range(0..2))).collect();
        labels[0] = 1.0;
        labels[1] = 0.0;

        let roc = roc_curve(&scores, &labels).unwrap();
        assert_eq!((roc[0].fpr, roc[0].tpr), (0.0, 0.0));
        let last = roc.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in roc.windows(2) {
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            assert!(w[1].threshold < w[0].threshold);
        }
        let a = auc(&scores, &labels).unwrap();
        assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn auc_is_invariant_under_monotone_score_transforms() {
    let mut r = rng::stream(0x140, &[]);
    let n = 80;
    let scores: Vec<f64> = (0..n)
        .map(|_| (r.gen_range(0.0..1.0f64) * 6.0).floor() / 6.0)
        .collect();
    let mut labels: Vec<f64> = (0..n).map(|_| f64::from(r.gen_range(0..2))).collect();
    labels[0] = 1.0;
    labels[1] = 0.0;

    let base = auc(&scores, &labels).unwrap();
    let squeezed: Vec<f64> = scores.iter().map(|s| 0.2 + 0.1 * s).collect();
    let curved: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
    assert_eq!(auc(&squeezed, &labels).unwrap(), base);
    assert_eq!(auc(&curved, &labels).unwrap(), base);
}
