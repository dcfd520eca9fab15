//! The four benchmark architectures behind one `Model` facade.
//!
//! All models map `[N,C,H,W]` images to `[N,1,H,W]` per-pixel probabilities
//! through a final sigmoid. Construction is fully determined by a
//! [`ModelConfig`] plus an [`InitPolicy`] seed.

mod cnn;
mod tokens;
mod unet;

pub use cnn::Cnn;
pub use tokens::TokenModel;
pub use unet::Unet;

use crate::error::{Error, Result};
use crate::layers::{InitPolicy, Params};
use crate::tensor::{PadMode, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

/// Architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Cnn,
    Unet,
    Vit,
    Vssm,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Cnn, Arch::Unet, Arch::Vit, Arch::Vssm];

    pub fn name(&self) -> &'static str {
        match self {
            Arch::Cnn => "cnn",
            Arch::Unet => "unet",
            Arch::Vit => "vit",
            Arch::Vssm => "vssm",
        }
    }
}

fn default_arch() -> Arch {
    Arch::Cnn
}
fn default_in_channels() -> usize {
    1
}
fn default_features() -> usize {
    8
}
fn default_depth() -> usize {
    3
}
fn default_patch() -> usize {
    8
}
fn default_heads() -> usize {
    2
}
fn default_state_dim() -> usize {
    8
}

/// Hyperparameters for any of the four architectures. Fields that do not
/// apply to a given architecture are ignored by it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_arch")]
    pub arch: Arch,
    /// Input image channels.
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    /// Base width: conv features for CNN/U-Net, embedding dim for ViT/VSSM.
    #[serde(default = "default_features")]
    pub features: usize,
    /// Conv blocks (CNN), encoder levels (U-Net), or token blocks (ViT/VSSM).
    /// Zero is legal and gives the degenerate form of each architecture.
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Patch edge for ViT/VSSM token grids.
    #[serde(default = "default_patch")]
    pub patch: usize,
    /// Attention heads (ViT).
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// States per channel in the SSM mixer (VSSM).
    #[serde(default = "default_state_dim")]
    pub state_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::with_arch(default_arch())
    }
}

impl ModelConfig {
    pub fn with_arch(arch: Arch) -> Self {
        ModelConfig {
            arch,
            in_channels: default_in_channels(),
            features: default_features(),
            depth: default_depth(),
            patch: default_patch(),
            heads: default_heads(),
            state_dim: default_state_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::config("model.in_channels must be positive"));
        }
        if self.features == 0 {
            return Err(Error::config("model.features must be positive"));
        }
        match self.arch {
            Arch::Vit => {
                if self.patch == 0 {
                    return Err(Error::config("model.patch must be positive"));
                }
                if self.heads == 0 || !self.features.is_multiple_of(self.heads) {
                    return Err(Error::config(format!(
                        "model.features ({}) must be divisible by model.heads ({})",
                        self.features, self.heads
                    )));
                }
            }
            Arch::Vssm => {
                if self.patch == 0 {
                    return Err(Error::config("model.patch must be positive"));
                }
                if self.state_dim == 0 {
                    return Err(Error::config("model.state_dim must be positive"));
                }
            }
            Arch::Cnn | Arch::Unet => {}
        }
        Ok(())
    }
}

/// A built architecture with its parameters.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)] // a handful of instances per run; weights live on the heap
pub enum Model {
    Cnn(Cnn),
    Unet(Unet),
    Vit(TokenModel),
    Vssm(TokenModel),
}

impl Model {
    pub fn build(config: &ModelConfig, init: InitPolicy) -> Result<Model> {
        config.validate()?;
        let mut rng = init.rng();
        Ok(match config.arch {
            Arch::Cnn => Model::Cnn(Cnn::new(config, &mut rng)),
            Arch::Unet => Model::Unet(Unet::new(config, &mut rng)),
            Arch::Vit => Model::Vit(TokenModel::new(config, &mut rng)),
            Arch::Vssm => Model::Vssm(TokenModel::new(config, &mut rng)),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::Cnn(m) => &m.config,
            Model::Unet(m) => &m.config,
            Model::Vit(m) | Model::Vssm(m) => &m.config,
        }
    }

    /// Run the network on a `[N,C,H,W]` batch already bound to `tape`.
    pub fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.config().in_channels {
            return Err(Error::shape(format!(
                "model expects [N,{},H,W], got {shape:?}",
                self.config().in_channels
            )));
        }
        match self {
            Model::Cnn(m) => m.forward(tape, x),
            Model::Unet(m) => m.forward(tape, x),
            Model::Vit(m) | Model::Vssm(m) => m.forward(tape, x),
        }
    }

    /// Convenience inference entry point on a transient tape.
    pub fn predict(&mut self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(batch);
        let y = self.forward(&mut tape, x)?;
        Ok(tape.value(y))
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        Params::visit_params(self, "", f);
    }

    /// Total number of learnable scalars.
    pub fn count_params(&mut self) -> usize {
        self.param_count()
    }

    /// Reinitialize parameters in place from a fresh policy seed.
    pub fn reinit(&mut self, init: InitPolicy) -> Result<()> {
        *self = Model::build(&self.config().clone(), init)?;
        Ok(())
    }

    /// Switch convolution padding to periodic mode (CNN only; used by the
    /// translation-equivariance test).
    pub fn set_pad_mode(&mut self, mode: PadMode) {
        if let Model::Cnn(m) = self {
            m.pad_mode = mode;
        }
    }
}

impl Params for Model {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        match self {
            Model::Cnn(m) => m.visit_params(prefix, f),
            Model::Unet(m) => m.visit_params(prefix, f),
            Model::Vit(m) | Model::Vssm(m) => m.visit_params(prefix, f),
        }
    }
}
