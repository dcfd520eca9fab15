//! Parameterized layers shared by the four architectures.
//!
//! Layers own their parameter tensors and bind them to the active tape on
//! each forward call. `visit_params` walks parameters in a fixed order under
//! hierarchical dot-separated names; initialization, Adam updates,
//! checkpointing, and parameter counting all reuse that single traversal.

use crate::error::Result;
use crate::tensor::{PadMode, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Initialization scheme: Kaiming-uniform weights with bound
/// `sqrt(6 / fan_in)`, zero biases, unit layer-norm gains.
#[derive(Debug, Clone, Copy)]
pub struct InitPolicy {
    pub seed: u64,
}

impl InitPolicy {
    pub fn rng(&self) -> ChaCha8Rng {
        crate::rng::stream(self.seed, &[crate::rng::tag::MODEL_INIT])
    }
}

pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng).with_grad()
}

/// Fixed-order traversal over named parameters.
pub trait Params {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, t| n += t.numel());
        n
    }
}

/// Hierarchical parameter name: `prefix.name`, or just `name` at the root.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map over the last axis: `[.., in] -> [.., out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(dim_in: usize, dim_out: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: kaiming_uniform(&[dim_in, dim_out], dim_in, rng),
            bias: Tensor::zeros(&[dim_out]).with_grad(),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let dim_in = self.weight.shape[0];
        let dim_out = self.weight.shape[1];
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let w = tape.leaf(&mut self.weight);
        let b = tape.leaf(&mut self.bias);
        let flat = tape.reshape(x, &[rows, dim_in])?;
        let y = tape.matmul(flat, w)?;
        let y = tape.add_broadcast(y, b)?;
        let mut out_shape = shape;
        *out_shape.last_mut().expect("rank >= 1") = dim_out;
        tape.reshape(y, &out_shape)
    }
}

impl Params for Linear {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// 2-d convolution layer over NCHW input.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Conv2d {
            weight: kaiming_uniform(&[c_out, c_in, kernel, kernel], c_in * kernel * kernel, rng),
            bias: Tensor::zeros(&[c_out]).with_grad(),
            stride,
            pad,
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: PadMode) -> Result<Var> {
        let w = tape.leaf(&mut self.weight);
        let b = tape.leaf(&mut self.bias);
        tape.conv2d(x, w, b, self.stride, self.pad, mode)
    }
}

impl Params for Conv2d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// Transposed convolution with kernel extent equal to stride (no bias).
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Tensor,
    pub stride: usize,
}

impl ConvTranspose2d {
    pub fn new(c_in: usize, c_out: usize, stride: usize, rng: &mut impl Rng) -> Self {
        ConvTranspose2d {
            weight: kaiming_uniform(&[c_in, c_out, stride, stride], c_in * stride * stride, rng),
            stride,
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.leaf(&mut self.weight);
        tape.conv_transpose2d(x, w, self.stride)
    }
}

impl Params for ConvTranspose2d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.weight);
    }
}

/// Layer norm over the last axis with learnable gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Tensor::ones(&[dim]).with_grad(),
            beta: Tensor::zeros(&[dim]).with_grad(),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let g = tape.leaf(&mut self.gamma);
        let b = tape.leaf(&mut self.beta);
        tape.layernorm(x, g, b)
    }
}

impl Params for LayerNorm {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }
}

/// Sinusoidal positional table: `pe[pos, 2i] = sin(pos / 10000^(2i/d))`,
/// `pe[pos, 2i+1] = cos(pos / 10000^(2i/d))`.
pub fn positional_encoding(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::from_vec(&[len, dim], data).expect("table is dense")
}

/// Non-overlapping patch embedding: `[N,C,H,W] -> [N,T,D]` with
/// `T = (H/P)*(W/P)` tokens in row-major patch-grid order.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub patch: usize,
    pub proj: Linear,
}

impl PatchEmbed {
    pub fn new(c_in: usize, patch: usize, dim: usize, rng: &mut impl Rng) -> Self {
        PatchEmbed {
            patch,
            proj: Linear::new(c_in * patch * patch, dim, rng),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let p = self.patch;
        let (gh, gw) = (h / p, w / p);
        let split = tape.reshape(x, &[n, c, gh, p, gw, p])?;
        let grouped = tape.permute(split, &[0, 2, 4, 1, 3, 5])?;
        let tokens = tape.reshape(grouped, &[n, gh * gw, c * p * p])?;
        self.proj.forward(tape, tokens)
    }
}

impl Params for PatchEmbed {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.proj.visit_params(&join(prefix, "proj"), f);
    }
}

/// Inverse of [`PatchEmbed`]: per-token linear map `D -> P*P`, reassembled
/// row-major into a single-channel image.
#[derive(Debug, Clone)]
pub struct PatchExpand {
    pub patch: usize,
    pub proj: Linear,
}

impl PatchExpand {
    pub fn new(dim: usize, patch: usize, rng: &mut impl Rng) -> Self {
        PatchExpand {
            patch,
            proj: Linear::new(dim, patch * patch, rng),
        }
    }

    /// `tokens` is `[N,T,D]`; `(gh, gw)` is the patch grid.
    pub fn forward(&mut self, tape: &mut Tape, tokens: Var, gh: usize, gw: usize) -> Result<Var> {
        let n = tape.shape(tokens)[0];
        let p = self.patch;
        let pixels = self.proj.forward(tape, tokens)?;
        let split = tape.reshape(pixels, &[n, gh, gw, p, p])?;
        let ordered = tape.permute(split, &[0, 1, 3, 2, 4])?;
        tape.reshape(ordered, &[n, 1, gh * p, gw * p])
    }
}

impl Params for PatchExpand {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.proj.visit_params(&join(prefix, "proj"), f);
    }
}

/// Standard scaled dot-product attention with `heads` heads.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

impl MultiHeadAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        MultiHeadAttention {
            heads,
            wq: Linear::new(dim, dim, rng),
            wk: Linear::new(dim, dim, rng),
            wv: Linear::new(dim, dim, rng),
            wo: Linear::new(dim, dim, rng),
        }
    }

    fn split_heads(&self, tape: &mut Tape, x: Var, n: usize, t: usize, dh: usize) -> Result<Var> {
        let h = self.heads;
        let split = tape.reshape(x, &[n, t, h, dh])?;
        let swapped = tape.permute(split, &[0, 2, 1, 3])?;
        tape.reshape(swapped, &[n * h, t, dh])
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let (n, t, d) = (s[0], s[1], s[2]);
        let dh = d / self.heads;
        let q = self.wq.forward(tape, x)?;
        let k = self.wk.forward(tape, x)?;
        let v = self.wv.forward(tape, x)?;
        let q = self.split_heads(tape, q, n, t, dh)?;
        let k = self.split_heads(tape, k, n, t, dh)?;
        let v = self.split_heads(tape, v, n, t, dh)?;
        let kt = tape.permute(k, &[0, 2, 1])?;
        let scores = tape.bmm(q, kt)?;
        let scaled = tape.mul_scalar(scores, 1.0 / (dh as f64).sqrt());
        let att = tape.softmax(scaled)?;
        let mixed = tape.bmm(att, v)?;
        let merged = tape.reshape(mixed, &[n, self.heads, t, dh])?;
        let swapped = tape.permute(merged, &[0, 2, 1, 3])?;
        let joined = tape.reshape(swapped, &[n, t, d])?;
        self.wo.forward(tape, joined)
    }
}

impl Params for MultiHeadAttention {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.wq.visit_params(&join(prefix, "wq"), f);
        self.wk.visit_params(&join(prefix, "wk"), f);
        self.wv.visit_params(&join(prefix, "wv"), f);
        self.wo.visit_params(&join(prefix, "wo"), f);
    }
}

/// Bidirectional diagonal state-space mixer.
///
/// The continuous-time decay is `-exp(a_log)`, discretized per channel with a
/// learnable step `delta = softplus(dt)`, giving an effective decay
/// `exp(-softplus(dt) * exp(a_log))` strictly inside `(0, 1)`. Forward and
/// reversed scans share parameters and are averaged.
#[derive(Debug, Clone)]
pub struct SsmMixer {
    pub a_log: Tensor,
    pub dt: Tensor,
    pub b: Tensor,
    pub c: Tensor,
}

impl SsmMixer {
    pub fn new(dim: usize, state: usize, rng: &mut impl Rng) -> Self {
        // Decay spectrum spread over state indices, unit step at start.
        let mut a_log = Tensor::zeros(&[dim, state]).with_grad();
        for d in 0..dim {
            for s in 0..state {
                a_log.data[d * state + s] = ((s + 1) as f64).ln();
            }
        }
        let dt0 = (std::f64::consts::E - 1.0).ln(); // softplus(dt0) == 1
        let bound = (6.0 / state as f64).sqrt();
        SsmMixer {
            a_log,
            dt: Tensor::full(&[dim], dt0).with_grad(),
            b: Tensor::rand_uniform(&[dim, state], -bound, bound, rng).with_grad(),
            c: Tensor::rand_uniform(&[dim, state], -bound, bound, rng).with_grad(),
        }
    }

    /// Effective decay `exp(-softplus(dt) * exp(a_log))` as a tape node.
    fn discrete_decay(&mut self, tape: &mut Tape) -> Result<Var> {
        let (dim, state) = (self.a_log.shape[0], self.a_log.shape[1]);
        let a_log = tape.leaf(&mut self.a_log);
        let dt = tape.leaf(&mut self.dt);
        let e_dt = tape.exp(dt);
        let e1 = tape.add_scalar(e_dt, 1.0);
        let softplus = tape.log(e1)?;
        let col = tape.reshape(softplus, &[dim, 1])?;
        let cols = vec![col; state];
        let delta = tape.concat(&cols, 1)?;
        let mag = tape.exp(a_log);
        let neg = tape.mul_scalar(mag, -1.0);
        let cont = tape.mul(neg, delta)?;
        Ok(tape.exp(cont))
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let decay = self.discrete_decay(tape)?;
        let b = tape.leaf(&mut self.b);
        let c = tape.leaf(&mut self.c);
        let fwd = tape.ssm_scan(x, decay, b, c, false)?;
        let rev = tape.ssm_scan(x, decay, b, c, true)?;
        let sum = tape.add(fwd, rev)?;
        Ok(tape.mul_scalar(sum, 0.5))
    }

    /// Test-only entry point: the raw coefficients drive a single forward
    /// scan directly, with no reparameterization and no reversed pass.
    pub fn forward_raw(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let a = tape.leaf(&mut self.a_log);
        let b = tape.leaf(&mut self.b);
        let c = tape.leaf(&mut self.c);
        tape.ssm_scan(x, a, b, c, false)
    }

    /// Snapshot of the discretized decay values (for property tests).
    pub fn decay_values(&mut self) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let decay = self.discrete_decay(&mut tape)?;
        Ok(tape.data(decay).to_vec())
    }
}

impl Params for SsmMixer {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "a_log"), &mut self.a_log);
        f(join(prefix, "dt"), &mut self.dt);
        f(join(prefix, "b"), &mut self.b);
        f(join(prefix, "c"), &mut self.c);
    }
}

/// Token mixer alternatives used by [`Block`].
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)] // one per block; weights live on the heap
pub enum Mixer {
    Attention(MultiHeadAttention),
    Ssm(SsmMixer),
}

impl Mixer {
    fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Mixer::Attention(m) => m.forward(tape, x),
            Mixer::Ssm(m) => m.forward(tape, x),
        }
    }
}

impl Params for Mixer {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        match self {
            Mixer::Attention(m) => m.visit_params(&join(prefix, "attn"), f),
            Mixer::Ssm(m) => m.visit_params(&join(prefix, "ssm"), f),
        }
    }
}

/// Two-layer MLP with GELU and hidden width `4*D`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(dim: usize, rng: &mut impl Rng) -> Self {
        Mlp {
            fc1: Linear::new(dim, 4 * dim, rng),
            fc2: Linear::new(4 * dim, dim, rng),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, x)?;
        let h = tape.gelu(h);
        self.fc2.forward(tape, h)
    }
}

impl Params for Mlp {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.fc1.visit_params(&join(prefix, "fc1"), f);
        self.fc2.visit_params(&join(prefix, "fc2"), f);
    }
}

/// Pre-norm residual block: `x = x + Mixer(LN(x))`, then `x = x + MLP(LN(x))`.
#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub mixer: Mixer,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl Block {
    pub fn new(dim: usize, mixer: Mixer, rng: &mut impl Rng) -> Self {
        Block {
            ln1: LayerNorm::new(dim),
            mixer,
            ln2: LayerNorm::new(dim),
            mlp: Mlp::new(dim, rng),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let normed = self.ln1.forward(tape, x)?;
        let mixed = self.mixer.forward(tape, normed)?;
        let x = tape.add(x, mixed)?;
        let normed = self.ln2.forward(tape, x)?;
        let expanded = self.mlp.forward(tape, normed)?;
        tape.add(x, expanded)
    }
}

impl Params for Block {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.ln1.visit_params(&join(prefix, "ln1"), f);
        self.mixer.visit_params(prefix, f);
        self.ln2.visit_params(&join(prefix, "ln2"), f);
        self.mlp.visit_params(&join(prefix, "mlp"), f);
    }
}
