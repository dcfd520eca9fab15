//! Encoder/decoder network with skip connections.

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::layers::{join, Conv2d, ConvTranspose2d, Params};
use crate::tensor::{PadMode, Tape, Tensor, Var};
use rand::Rng;

/// Two 3x3 convolutions with ReLU after each.
#[derive(Debug, Clone)]
pub struct DoubleConv {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl DoubleConv {
    fn new(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        DoubleConv {
            conv1: Conv2d::new(c_in, c_out, 3, 1, 1, rng),
            conv2: Conv2d::new(c_out, c_out, 3, 1, 1, rng),
        }
    }

    fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, x, PadMode::Zero)?;
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, h, PadMode::Zero)?;
        Ok(tape.relu(h))
    }
}

impl Params for DoubleConv {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
    }
}

/// Encoder levels `i = 1..=depth` at `F * 2^(i-1)` channels, each followed by
/// a 2x2 max pool; a bottleneck double conv at `F * 2^depth` channels; a
/// mirrored decoder where each level upsamples with a 2x2 stride-2 transposed
/// conv, concatenates the matching skip (doubling channels), and applies a
/// double conv; finally a 1x1 conv head with sigmoid. `depth = 0` degrades to
/// bottleneck + head, a plain conv net.
#[derive(Debug, Clone)]
pub struct Unet {
    pub config: ModelConfig,
    pub enc: Vec<DoubleConv>,
    pub bottleneck: DoubleConv,
    pub ups: Vec<ConvTranspose2d>,
    pub dec: Vec<DoubleConv>,
    pub head: Conv2d,
}

impl Unet {
    pub fn new(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let f = config.features;
        let depth = config.depth;
        let level_ch = |i: usize| f << (i - 1); // channels of encoder level i in 1..=depth
        let mut enc = Vec::with_capacity(depth);
        for i in 1..=depth {
            let c_in = if i == 1 {
                config.in_channels
            } else {
                level_ch(i - 1)
            };
            enc.push(DoubleConv::new(c_in, level_ch(i), rng));
        }
        let bottleneck_in = if depth == 0 {
            config.in_channels
        } else {
            level_ch(depth)
        };
        let bottleneck_ch = f << depth;
        let bottleneck = DoubleConv::new(bottleneck_in, bottleneck_ch, rng);
        let mut ups = Vec::with_capacity(depth);
        let mut dec = Vec::with_capacity(depth);
        // Decoder level i consumes the output of level i+1 (or the bottleneck).
        for i in (1..=depth).rev() {
            let deeper = if i == depth {
                bottleneck_ch
            } else {
                level_ch(i + 1)
            };
            ups.push(ConvTranspose2d::new(deeper, level_ch(i), 2, rng));
            dec.push(DoubleConv::new(2 * level_ch(i), level_ch(i), rng));
        }
        let head_in = if depth == 0 {
            bottleneck_ch
        } else {
            level_ch(1)
        };
        Unet {
            config: config.clone(),
            enc,
            bottleneck,
            ups,
            dec,
            head: Conv2d::new(head_in, 1, 1, 1, 0, rng),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let div = 1usize << self.config.depth;
        if !shape[2].is_multiple_of(div) || !shape[3].is_multiple_of(div) {
            return Err(Error::shape(format!(
                "unet depth {} needs H and W divisible by {div}, got {}x{}",
                self.config.depth, shape[2], shape[3]
            )));
        }
        let mut h = x;
        let mut skips = Vec::with_capacity(self.enc.len());
        for level in &mut self.enc {
            let features = level.forward(tape, h)?;
            skips.push(features);
            h = tape.maxpool2d(features)?;
        }
        h = self.bottleneck.forward(tape, h)?;
        for (i, (up, dec)) in self.ups.iter_mut().zip(&mut self.dec).enumerate() {
            let skip = skips[skips.len() - 1 - i];
            let upsampled = up.forward(tape, h)?;
            let joined = tape.concat(&[upsampled, skip], 1)?;
            h = dec.forward(tape, joined)?;
        }
        let logits = self.head.forward(tape, h, PadMode::Zero)?;
        Ok(tape.sigmoid(logits))
    }
}

impl Params for Unet {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, level) in self.enc.iter_mut().enumerate() {
            level.visit_params(&join(prefix, &format!("enc{}", i + 1)), f);
        }
        self.bottleneck.visit_params(&join(prefix, "bottleneck"), f);
        let depth = self.dec.len();
        for (i, up) in self.ups.iter_mut().enumerate() {
            up.visit_params(&join(prefix, &format!("up{}", depth - i)), f);
        }
        for (i, level) in self.dec.iter_mut().enumerate() {
            level.visit_params(&join(prefix, &format!("dec{}", depth - i)), f);
        }
        self.head.visit_params(&join(prefix, "head"), f);
    }
}
