//! Mini-batch training with best-on-validation checkpointing.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::arch::Model;
use crate::checkpoint::ParamSnapshot;
use crate::datagen::{random_crops, stack_batch, Sample};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::tensor::{Tape, Tensor};
use crate::train::{bce, Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Train on random square crops of this side instead of full images.
    pub crop: Option<usize>,
    /// Crops drawn per image per epoch (only used with `crop`).
    pub crops_per_image: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: 1e-3,
            batch: 4,
            seed: 0,
            crop: None,
            crops_per_image: 1,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1".to_string()));
        }
        if self.batch == 0 {
            return Err(Error::config("batch must be at least 1".to_string()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::config(format!(
                "lr must be positive and finite, got {}",
                self.lr
            )));
        }
        if self.crop == Some(0) {
            return Err(Error::config("crop must be at least 1".to_string()));
        }
        if self.crops_per_image == 0 {
            return Err(Error::config(
                "crops_per_image must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Losses for one pass over the data; `epoch` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub steps: u64,
    pub wall_seconds: f64,
}

/// Mean BCE over `samples` without touching gradients or parameters.
pub fn eval_loss(model: &mut Model, samples: &[Sample], batch: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::config(
            "cannot evaluate a loss on an empty set".to_string(),
        ));
    }
    let pairs: Vec<(Tensor, Tensor)> = samples
        .iter()
        .map(|s| (s.image.clone(), s.mask.clone()))
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    for chunk in pairs.chunks(batch.max(1)) {
        let (x, y) = stack_batch(chunk)?;
        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let yv = tape.constant(&y);
        let pred = model.forward(&mut tape, xv)?;
        let loss_var = bce(&mut tape, pred, yv)?;
        let loss = tape.data(loss_var)[0];
        num += loss * chunk.len() as f64;
        den += chunk.len() as f64;
    }
    Ok(num / den)
}

/// Train `model` on `train_set`, scoring `val_set` after every epoch and
/// restoring the parameters of the best validation epoch (earliest wins on
/// exact ties) before returning.
pub fn train(
    model: &mut Model,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
) -> Result<TrainResult> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("training set is empty".to_string()));
    }
    if val_set.is_empty() {
        return Err(Error::config("validation set is empty".to_string()));
    }
    let start = Instant::now();
    let mut adam = Adam::new(config.lr, config.adam);
    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ParamSnapshot)> = None;

    for epoch in 1..=config.epochs {
        let mut pairs: Vec<(Tensor, Tensor)> = match config.crop {
            Some(crop) => {
                let mut r = rng::stream(config.seed, &[tag::CROP, epoch as u64]);
                random_crops(train_set, crop, config.crops_per_image, &mut r)?
            }
            None => train_set
                .iter()
                .map(|s| (s.image.clone(), s.mask.clone()))
                .collect(),
        };
        pairs.shuffle(&mut rng::stream(config.seed, &[tag::SHUFFLE, epoch as u64]));

        let (mut num, mut den) = (0.0, 0.0);
        for (batch_idx, chunk) in pairs.chunks(config.batch).enumerate() {
            let (x, y) = stack_batch(chunk)?;
            let mut tape = Tape::new();
            let xv = tape.constant(&x);
            let yv = tape.constant(&y);
            let pred = model.forward(&mut tape, xv)?;
            let loss_var = bce(&mut tape, pred, yv)?;
            let loss = tape.data(loss_var)[0];
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: batch_idx,
                    loss,
                });
            }
            tape.backward(loss_var)?;
            adam.step(model, &tape)?;
            num += loss * chunk.len() as f64;
            den += chunk.len() as f64;
        }
        let train_loss = num / den;
        let val_loss = eval_loss(model, val_set, config.batch)?;
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });

        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, ParamSnapshot::capture(model)));
        }
    }

    let (best_epoch, best_val_loss, snapshot) = best.expect("at least one epoch ran");
    snapshot.restore(model)?;
    Ok(TrainResult {
        epochs: records,
        best_epoch,
        best_val_loss,
        steps: adam.steps_taken(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation_catches_zeroes() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig {
            epochs: 0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch: 0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lr: 0.0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lr: f64::NAN,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            crop: Some(0),
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            crops_per_image: 0,
            ..ok
        }
        .validate()
        .is_err());
    }

    #[test]
    fn config_json_round_trips_and_rejects_unknown_keys() {
        let parsed: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "lr": 0.01}"#).unwrap();
        assert_eq!(parsed.epochs, 3);
        assert_eq!(parsed.lr, 0.01);
        assert_eq!(parsed.batch, TrainConfig::default().batch);

        let err = serde_json::from_str::<TrainConfig>(r#"{"epochz": 3}"#).unwrap_err();
        assert!(err.to_string().contains("epochz"));
    }
}
