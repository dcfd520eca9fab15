//! Token-based architectures: ViT and VSSM share everything except the
//! sequence mixer inside each block.

use super::{Arch, ModelConfig};
use crate::error::{Error, Result};
use crate::layers::{
    join, positional_encoding, Block, Mixer, MultiHeadAttention, Params, PatchEmbed, PatchExpand,
    SsmMixer,
};
use crate::tensor::{Tape, Tensor, Var};
use rand::Rng;

/// Patch embedding, sinusoidal position table, `depth` pre-norm blocks, and
/// a per-token patch expansion back to pixels, ending in a sigmoid. Tokens
/// run over the patch grid in row-major order.
#[derive(Debug, Clone)]
pub struct TokenModel {
    pub config: ModelConfig,
    pub patch_embed: PatchEmbed,
    pub blocks: Vec<Block>,
    pub expand: PatchExpand,
}

impl TokenModel {
    pub fn new(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let dim = config.features;
        let patch_embed = PatchEmbed::new(config.in_channels, config.patch, dim, rng);
        let blocks = (0..config.depth)
            .map(|_| {
                let mixer = match config.arch {
                    Arch::Vssm => Mixer::Ssm(SsmMixer::new(dim, config.state_dim, rng)),
                    _ => Mixer::Attention(MultiHeadAttention::new(dim, config.heads, rng)),
                };
                Block::new(dim, mixer, rng)
            })
            .collect();
        TokenModel {
            config: config.clone(),
            patch_embed,
            blocks,
            expand: PatchExpand::new(dim, config.patch, rng),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let p = self.config.patch;
        if !shape[2].is_multiple_of(p) || !shape[3].is_multiple_of(p) {
            return Err(Error::shape(format!(
                "{} patch {p} needs H and W divisible by {p}, got {}x{}",
                self.config.arch.name(),
                shape[2],
                shape[3]
            )));
        }
        let (gh, gw) = (shape[2] / p, shape[3] / p);
        let mut tokens = self.patch_embed.forward(tape, x)?;
        let table = positional_encoding(gh * gw, self.config.features);
        let pe = tape.constant(&table);
        tokens = tape.add_broadcast(tokens, pe)?;
        for block in &mut self.blocks {
            tokens = block.forward(tape, tokens)?;
        }
        let logits = self.expand.forward(tape, tokens, gh, gw)?;
        Ok(tape.sigmoid(logits))
    }
}

impl Params for TokenModel {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.patch_embed
            .visit_params(&join(prefix, "patch_embed"), f);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_params(&join(prefix, &format!("block{i}")), f);
        }
        self.expand.visit_params(&join(prefix, "expand"), f);
    }
}
