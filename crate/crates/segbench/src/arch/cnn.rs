//! Plain convolutional baseline.

use super::ModelConfig;
use crate::error::Result;
use crate::layers::{join, Conv2d, Params};
use crate::tensor::{PadMode, Tape, Tensor, Var};
use rand::Rng;

/// `conv(C->F) + ReLU`, `depth` blocks of `conv(F->F) + ReLU`, then a
/// `conv(F->1)` head with sigmoid. All convs are 3x3, stride 1, pad 1, so
/// spatial extent is preserved.
#[derive(Debug, Clone)]
pub struct Cnn {
    pub config: ModelConfig,
    pub conv_in: Conv2d,
    pub blocks: Vec<Conv2d>,
    pub conv_out: Conv2d,
    pub pad_mode: PadMode,
}

impl Cnn {
    pub fn new(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let f = config.features;
        Cnn {
            config: config.clone(),
            conv_in: Conv2d::new(config.in_channels, f, 3, 1, 1, rng),
            blocks: (0..config.depth)
                .map(|_| Conv2d::new(f, f, 3, 1, 1, rng))
                .collect(),
            conv_out: Conv2d::new(f, 1, 3, 1, 1, rng),
            pad_mode: PadMode::Zero,
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mode = self.pad_mode;
        let mut h = self.conv_in.forward(tape, x, mode)?;
        h = tape.relu(h);
        for block in &mut self.blocks {
            h = block.forward(tape, h, mode)?;
            h = tape.relu(h);
        }
        let logits = self.conv_out.forward(tape, h, mode)?;
        Ok(tape.sigmoid(logits))
    }
}

impl Params for Cnn {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.conv_in.visit_params(&join(prefix, "conv_in"), f);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_params(&join(prefix, &format!("block{i}")), f);
        }
        self.conv_out.visit_params(&join(prefix, "conv_out"), f);
    }
}
