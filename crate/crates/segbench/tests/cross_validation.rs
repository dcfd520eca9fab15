use segbench::arch::{Arch, ModelConfig};
use segbench::datagen::{self, DataKind, Sample};
use segbench::eval::{cross_validate, snr_sweep};
use segbench::tensor::Tensor;
use segbench::train::TrainConfig;
use segbench::Error;

fn small_config() -> ModelConfig {
    ModelConfig {
        features: 4,
        depth: 1,
        ..ModelConfig::with_arch(Arch::Cnn)
    }
}

fn quick_train() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        lr: 1e-2,
        batch: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn every_sample_is_tested_exactly_once() {
    let samples = datagen::generate(DataKind::Airy, 7, 16, 16, 42).unwrap();
    let cv = cross_validate(&small_config(), &samples, 3, &quick_train(), 42, 1).unwrap();

    assert_eq!(cv.folds.len(), 3);
    assert_eq!(cv.pooled.total(), 7 * 16 * 16);
    let from_folds: u64 = cv.folds.iter().map(|f| f.confusion.total()).sum();
    assert_eq!(from_folds, cv.pooled.total());
    assert!(cv.param_count > 0);
    assert!((0.0..=1.0).contains(&cv.pooled_auc));
    for f in &cv.folds {
        assert!(f.test_loss.is_finite());
        assert!(f.scores.iter().all(|s| (0.0..=1.0).contains(s)));
        assert_eq!(f.train.epochs.len(), 2);
    }
}

#[test]
fn results_are_deterministic_and_thread_count_invariant() {
    let samples = datagen::generate(DataKind::Airy, 6, 16, 16, 7).unwrap();
    let config = small_config();
    let tc = quick_train();

    let a = cross_validate(&config, &samples, 3, &tc, 11, 1).unwrap();
    let b = cross_validate(&config, &samples, 3, &tc, 11, 1).unwrap();
    let c = cross_validate(&config, &samples, 3, &tc, 11, 3).unwrap();

    for other in [&b, &c] {
        assert_eq!(a.pooled_auc.to_bits(), other.pooled_auc.to_bits());
        assert_eq!(a.pooled, other.pooled);
        for (x, y) in a.folds.iter().zip(&other.folds) {
            assert_eq!(x.train.epochs, y.train.epochs);
            assert_eq!(x.confusion, y.confusion);
            assert_eq!(x.auc, y.auc);
        }
    }

    let d = cross_validate(&config, &samples, 3, &tc, 12, 1).unwrap();
    assert_ne!(a.pooled_auc.to_bits(), d.pooled_auc.to_bits());
}

#[test]
fn folds_get_distinct_models_and_data() {
    let samples = datagen::generate(DataKind::Airy, 9, 16, 16, 3).unwrap();
    let cv = cross_validate(&small_config(), &samples, 3, &quick_train(), 3, 1).unwrap();
    // Different training data and init per fold: the loss paths differ.
    let first: Vec<u64> = cv
        .folds
        .iter()
        .map(|f| f.train.epochs[0].train_loss.to_bits())
        .collect();
    assert!(first.windows(2).any(|w| w[0] != w[1]));
}

#[test]
fn all_negative_labels_fail_at_the_pooled_roc() {
    let image = Tensor::zeros(&[1, 16, 16]);
    let mask = Tensor::zeros(&[1, 16, 16]);
    let samples: Vec<Sample> = (0..6)
        .map(|_| Sample {
            image: image.clone(),
            mask: mask.clone(),
            amplitude: 1.0,
        })
        .collect();
    let err = cross_validate(&small_config(), &samples, 3, &quick_train(), 1, 1).unwrap_err();
    assert!(matches!(err, Error::DegenerateLabels));
}

#[test]
fn trained_cnn_beats_chance_at_high_snr() {
    let samples = datagen::generate_noisy(DataKind::Airy, 9, 24, 24, 20.0, 90).unwrap();
    let tc = TrainConfig {
        epochs: 40,
        lr: 5e-3,
        batch: 3,
        ..TrainConfig::default()
    };
    let cv = cross_validate(&small_config(), &samples, 3, &tc, 90, 3).unwrap();
    assert!(cv.pooled_auc > 0.7, "pooled AUC {}", cv.pooled_auc);
}

#[test]
fn snr_sweep_reuses_clean_structure_per_level() {
    let config = small_config();
    let tc = quick_train();
    let points = snr_sweep(&config, DataKind::Airy, 6, 16, &[2.0, 8.0], 3, &tc, 55, 1).unwrap();
    assert_eq!(points.len(), 2);
    assert_eq!(points[0].snr, 2.0);
    assert_eq!(points[1].snr, 8.0);
    for p in &points {
        assert_eq!(p.result.folds.len(), 3);
        assert_eq!(p.result.pooled.total(), 6 * 16 * 16);
    }
    // Same labels at both levels: only the noise differs.
    let labels = |cv: &segbench::eval::CvResult| {
        cv.folds
            .iter()
            .map(|f| f.labels.clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(labels(&points[0].result), labels(&points[1].result));

    assert!(matches!(
        snr_sweep(&config, DataKind::Airy, 6, 16, &[], 3, &tc, 55, 1),
        Err(Error::Config(_))
    ));
}
