//! Crate-wide error type.

use std::path::PathBuf;

/// Errors shared by every module in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor extents do not satisfy an operation's contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// A value falls outside an operation's numeric domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value or combination is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// A file or directory does not match the expected on-disk format.
    #[error("format error: {0}")]
    Format(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    /// ROC/AUC input where every label belongs to a single class.
    #[error("degenerate labels: both classes must be present")]
    DegenerateLabels,

    /// Refusing to overwrite an existing output directory without --force.
    #[error("output directory already exists: {}", .0.display())]
    OutputExists(PathBuf),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
