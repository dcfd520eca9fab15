//! Self-contained segmentation benchmark: a reverse-mode autodiff core,
//! four pixel-wise segmentation architectures (CNN, U-Net, ViT, VSSM),
//! synthetic data generators, and a train/evaluate pipeline with
//! cross-validation, ROC/AUC metrics, and SNR sweeps.
//!
//! Everything runs on `f64` host arithmetic with seeded RNG streams so that
//! identical configurations reproduce bit-identical results.

pub mod arch;
pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
