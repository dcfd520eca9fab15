//! Run configuration: a strict JSON file with every field optional.
//!
//! Unknown keys are rejected with their JSON pointer (e.g. `/train/epochz`)
//! before deserialization, so typos surface with a path instead of a byte
//! offset.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use segbench::arch::ModelConfig;
use segbench::datagen::DataKind;
use segbench::train::TrainConfig;
use segbench::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub kind: DataKind,
    pub count: usize,
    pub extent: usize,
    /// Additive Gaussian noise level; omit for clean images.
    pub snr: Option<f64>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: DataKind::Airy,
            count: 25,
            extent: 32,
            snr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub folds: usize,
    /// Noise levels for the sweep verb; ignored by plain runs.
    pub snrs: Vec<f64>,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            seed: 0,
            dataset: DatasetSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            folds: 5,
            snrs: Vec::new(),
        }
    }
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if let Some(snr) = self.dataset.snr {
            if !snr.is_finite() || snr <= 0.0 {
                return Err(Error::config(format!(
                    "dataset snr must be positive, got {snr}"
                )));
            }
        }
        if self.dataset.count == 0 {
            return Err(Error::config(
                "dataset count must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Allowed keys per object, addressed by JSON pointer.
const SCHEMA: &[(&str, &[&str])] = &[
    ("", &["seed", "dataset", "model", "train", "folds", "snrs"]),
    ("/dataset", &["kind", "count", "extent", "snr"]),
    (
        "/model",
        &[
            "arch",
            "in_channels",
            "features",
            "depth",
            "patch",
            "heads",
            "state_dim",
        ],
    ),
    (
        "/train",
        &[
            "epochs",
            "lr",
            "batch",
            "seed",
            "crop",
            "crops_per_image",
            "adam",
        ],
    ),
    ("/train/adam", &["beta1", "beta2", "eps"]),
];

fn check_keys(pointer: &str, value: &Value) -> Result<()> {
    let Value::Object(map) = value else {
        return Ok(());
    };
    let Some((_, allowed)) = SCHEMA.iter().find(|(p, _)| *p == pointer) else {
        return Ok(());
    };
    for (key, child) in map {
        let child_pointer = format!("{pointer}/{key}");
        if !allowed.contains(&key.as_str()) {
            return Err(Error::config(format!(
                "unknown key {child_pointer} (allowed here: {})",
                allowed.join(", ")
            )));
        }
        check_keys(&child_pointer, child)?;
    }
    Ok(())
}

/// Parse and validate a config, materializing every default.
pub fn parse(text: &str) -> Result<RunSpec> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::config(format!("invalid JSON: {e}")))?;
    if !value.is_object() {
        return Err(Error::config("config must be a JSON object".to_string()));
    }
    check_keys("", &value)?;
    let spec: RunSpec = serde_json::from_value(value).map_err(|e| Error::config(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn load(path: &Path) -> Result<RunSpec> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// The materialized config as written to `config_echo.json`.
pub fn echo(spec: &RunSpec) -> String {
    let mut text = serde_json::to_string_pretty(spec).expect("spec serializes");
    text.push('\n');
    text
}
