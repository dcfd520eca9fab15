//! K-fold cross-validated evaluation and SNR sweeps.

use crate::arch::{Model, ModelConfig};
use crate::datagen::{self, make_folds, stack_batch, DataKind, Sample};
use crate::error::{Error, Result};
use crate::layers::InitPolicy;
use crate::metrics::{roc_curve, Confusion, RocPoint, DECISION_THRESHOLD};
use crate::rng::{derive_seed, tag};
use crate::train::{eval_loss, train, TrainConfig, TrainResult};

/// Everything measured on one fold's held-out test split.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub confusion: Confusion,
    /// `None` when the fold's test pixels are all one class.
    pub auc: Option<f64>,
    pub test_loss: f64,
    pub train: TrainResult,
    /// Per-pixel scores and labels on the test split, kept for pooling.
    pub scores: Vec<f64>,
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub folds: Vec<FoldOutcome>,
    /// Confusion over every test pixel of every fold.
    pub pooled: Confusion,
    pub pooled_roc: Vec<RocPoint>,
    pub pooled_auc: f64,
    pub param_count: usize,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    match defined.len() {
        0 => None,
        n => Some(defined.iter().sum::<f64>() / n as f64),
    }
}

impl CvResult {
    /// Unweighted mean over folds where the rate is defined.
    pub fn mean_accuracy(&self) -> Option<f64> {
        mean_defined(self.folds.iter().map(|f| f.confusion.accuracy()))
    }

    pub fn mean_sensitivity(&self) -> Option<f64> {
        mean_defined(self.folds.iter().map(|f| f.confusion.sensitivity()))
    }

    pub fn mean_specificity(&self) -> Option<f64> {
        mean_defined(self.folds.iter().map(|f| f.confusion.specificity()))
    }

    pub fn mean_auc(&self) -> Option<f64> {
        mean_defined(self.folds.iter().map(|f| f.auc))
    }

    pub fn mean_test_loss(&self) -> f64 {
        self.folds.iter().map(|f| f.test_loss).sum::<f64>() / self.folds.len() as f64
    }
}

fn subset(samples: &[Sample], idx: &[usize]) -> Vec<Sample> {
    idx.iter().map(|i| samples[*i].clone()).collect()
}

fn run_fold(
    config: &ModelConfig,
    samples: &[Sample],
    fold_idx: usize,
    fold: &datagen::Fold,
    train_config: &TrainConfig,
    base_seed: u64,
) -> Result<FoldOutcome> {
    let fold_seed = derive_seed(base_seed, &[tag::FOLD, fold_idx as u64]);
    let mut model = Model::build(config, InitPolicy { seed: fold_seed })?;
    let train_set = subset(samples, &fold.train);
    let val_set = subset(samples, &fold.val);
    let test_set = subset(samples, &fold.test);

    let fold_train_config = TrainConfig {
        seed: fold_seed,
        ..train_config.clone()
    };
    let train_result = train(&mut model, &train_set, &val_set, &fold_train_config)?;

    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for chunk_samples in test_set.chunks(fold_train_config.batch) {
        let pairs: Vec<_> = chunk_samples
            .iter()
            .map(|s| (s.image.clone(), s.mask.clone()))
            .collect();
        let (x, y) = stack_batch(&pairs)?;
        let pred = model.predict(&x)?;
        scores.extend_from_slice(&pred.data);
        labels.extend_from_slice(&y.data);
    }
    let confusion = Confusion::from_pairs(&scores, &labels, DECISION_THRESHOLD)?;
    let auc = match crate::metrics::auc(&scores, &labels) {
        Ok(a) => Some(a),
        Err(Error::DegenerateLabels) => None,
        Err(e) => return Err(e),
    };
    let test_loss = eval_loss(&mut model, &test_set, fold_train_config.batch)?;

    Ok(FoldOutcome {
        fold: fold_idx,
        confusion,
        auc,
        test_loss,
        train: train_result,
        scores,
        labels,
    })
}

/// Train and score one model per fold. Fold splits, model init, shuffling,
/// and cropping all derive from `base_seed`, so results are identical for a
/// given seed regardless of `threads`.
pub fn cross_validate(
    config: &ModelConfig,
    samples: &[Sample],
    k: usize,
    train_config: &TrainConfig,
    base_seed: u64,
    threads: usize,
) -> Result<CvResult> {
    config.validate()?;
    train_config.validate()?;
    let folds = make_folds(samples.len(), k, base_seed)?;

    let mut outcomes: Vec<Option<FoldOutcome>> = (0..k).map(|_| None).collect();
    if threads <= 1 {
        for (i, fold) in folds.iter().enumerate() {
            outcomes[i] = Some(run_fold(config, samples, i, fold, train_config, base_seed)?);
        }
    } else {
        let workers = threads.min(k);
        let results = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let folds = &folds;
                    scope.spawn(move || {
                        let mut done = Vec::new();
                        for i in (w..folds.len()).step_by(workers) {
                            done.push((
                                i,
                                run_fold(config, samples, i, &folds[i], train_config, base_seed),
                            ));
                        }
                        done
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("fold worker panicked"))
                .collect::<Vec<_>>()
        });
        for (i, result) in results {
            outcomes[i] = Some(result?);
        }
    }
    let folds: Vec<FoldOutcome> = outcomes.into_iter().map(|o| o.expect("fold ran")).collect();

    let mut pooled = Confusion::default();
    let mut pooled_scores = Vec::new();
    let mut pooled_labels = Vec::new();
    for f in &folds {
        pooled.merge(&f.confusion);
        pooled_scores.extend_from_slice(&f.scores);
        pooled_labels.extend_from_slice(&f.labels);
    }
    let pooled_roc = roc_curve(&pooled_scores, &pooled_labels)?;
    let pooled_auc = crate::metrics::auc_trapezoid(&pooled_roc);

    let param_count = Model::build(config, InitPolicy { seed: 0 })?.count_params();
    Ok(CvResult {
        folds,
        pooled,
        pooled_roc,
        pooled_auc,
        param_count,
    })
}

/// One cross-validation per signal-to-noise level. The clean image structure
/// is identical across levels; only the additive noise differs.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub snr: f64,
    pub result: CvResult,
}

#[allow(clippy::too_many_arguments)]
pub fn snr_sweep(
    config: &ModelConfig,
    kind: DataKind,
    n: usize,
    extent: usize,
    snrs: &[f64],
    k: usize,
    train_config: &TrainConfig,
    base_seed: u64,
    threads: usize,
) -> Result<Vec<SweepPoint>> {
    if snrs.is_empty() {
        return Err(Error::config(
            "snr sweep needs at least one level".to_string(),
        ));
    }
    let mut points = Vec::with_capacity(snrs.len());
    for &snr in snrs {
        let samples = datagen::generate_noisy(kind, n, extent, extent, snr, base_seed)?;
        let result = cross_validate(config, &samples, k, train_config, base_seed, threads)?;
        points.push(SweepPoint { snr, result });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_defined_skips_undefined_folds() {
        assert_eq!(
            mean_defined([Some(1.0), None, Some(0.0)].into_iter()),
            Some(0.5)
        );
        assert_eq!(mean_defined([None, None].into_iter()), None);
        assert_eq!(mean_defined(std::iter::empty()), None);
    }
}
