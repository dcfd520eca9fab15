//! Append-only reverse-mode tape.
//!
//! Forward methods validate shapes, execute the kernel, and record an op
//! node holding input ids plus whatever the backward pass needs. Node ids
//! only grow, so the tape is already topologically ordered and a single
//! reverse sweep computes all gradients.

use super::kernels::{self, ConvDims, ConvTDims};
use super::{numel, PadMode, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Saturation bounds applied by [`Tape::sigmoid`] and expected in front of
/// [`Tape::log`]: probabilities live in `[1e-7, 1 - 1e-7]`.
pub const PROB_CLAMP_LO: f64 = 1e-7;
pub const PROB_CLAMP_HI: f64 = 1.0 - 1e-7;

/// Epsilon inside the layer-norm variance square root.
pub const LAYERNORM_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    /// `b`'s shape is a suffix of `a`'s; `b` repeats over leading axes.
    AddBroadcast(usize, usize),
    Relu(usize),
    Gelu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Clamp {
        x: usize,
        lo: f64,
        hi: f64,
    },
    Matmul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Bmm {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        x: usize,
        k: usize,
        bias: usize,
        dims: ConvDims,
        mode: PadMode,
    },
    ConvT2d {
        x: usize,
        k: usize,
        dims: ConvTDims,
    },
    MaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    Softmax {
        x: usize,
        rows: usize,
        cols: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        rows: usize,
        cols: usize,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat {
        parts: Vec<usize>,
        outer: usize,
        inner: usize,
        extents: Vec<usize>,
    },
    Reshape(usize),
    Permute {
        x: usize,
        order: Vec<usize>,
    },
    SsmScan {
        x: usize,
        decay: usize,
        input_c: usize,
        output_c: usize,
        reversed: bool,
        states: Vec<f64>,
    },
    Sum(usize),
    Mean(usize),
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Recorded computation graph for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    ran_backward: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(data.len(), numel(&shape));
        self.nodes.push(Node {
            data,
            shape,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Bind a tensor as a leaf and remember the node id on the tensor so its
    /// gradient can be collected after [`Tape::backward`].
    pub fn leaf(&mut self, t: &mut Tensor) -> Var {
        let v = self.push(t.data.clone(), t.shape.clone(), t.requires_grad, Op::Leaf);
        t.node = Some(v.0);
        v
    }

    /// Bind a tensor as a non-differentiable leaf.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.data.clone(), t.shape.clone(), false, Op::Leaf)
    }

    pub fn constant_full(&mut self, shape: &[usize], value: f64) -> Var {
        self.push(vec![value; numel(shape)], shape.to_vec(), false, Op::Leaf)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0]
    }

    /// Materialize a node as a standalone tensor.
    pub fn value(&self, v: Var) -> Tensor {
        Tensor {
            shape: self.nodes[v.0].shape.clone(),
            data: self.nodes[v.0].data.clone(),
            requires_grad: false,
            grad: None,
            node: None,
        }
    }

    /// Copy the gradient of the leaf this tensor was bound to into `t.grad`.
    pub fn collect_grad(&self, t: &mut Tensor) -> Result<()> {
        let id = t
            .node
            .ok_or_else(|| Error::domain("tensor is not bound to a tape node"))?;
        let g = self.nodes[id]
            .grad
            .clone()
            .ok_or_else(|| Error::domain("no gradient recorded; run backward first"))?;
        t.grad = Some(g);
        Ok(())
    }

    fn binary_check(&self, a: Var, b: Var, what: &str) -> Result<bool> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa == sb {
            Ok(false)
        } else if numel(sb) == 1 {
            Ok(true)
        } else {
            Err(Error::shape(format!(
                "{what}: shapes {sa:?} and {sb:?} must match (or rhs must be a scalar)"
            )))
        }
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let scalar_b = self.binary_check(a, b, "add")?;
        let bv = if scalar_b {
            self.nodes[b.0].data[0]
        } else {
            0.0
        };
        let data = self.nodes[a.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| {
                x + if scalar_b {
                    bv
                } else {
                    self.nodes[b.0].data[i]
                }
            })
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(data, shape, rg, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let scalar_b = self.binary_check(a, b, "sub")?;
        let bv = if scalar_b {
            self.nodes[b.0].data[0]
        } else {
            0.0
        };
        let data = self.nodes[a.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| {
                x - if scalar_b {
                    bv
                } else {
                    self.nodes[b.0].data[i]
                }
            })
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(data, shape, rg, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let scalar_b = self.binary_check(a, b, "mul")?;
        let bv = if scalar_b {
            self.nodes[b.0].data[0]
        } else {
            0.0
        };
        let data = self.nodes[a.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| {
                x * if scalar_b {
                    bv
                } else {
                    self.nodes[b.0].data[i]
                }
            })
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(data, shape, rg, Op::Mul(a.0, b.0)))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let data = self.nodes[a.0].data.iter().map(|x| x + c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::AddScalar(a.0))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let data = self.nodes[a.0].data.iter().map(|x| x * c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::MulScalar(a.0, c))
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s shape; `b` repeats over
    /// the leading axes. Used for bias and positional-table addition.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sb.len() > sa.len() || &sa[sa.len() - sb.len()..] != sb.as_slice() {
            return Err(Error::shape(format!(
                "add_broadcast: {sb:?} is not a suffix of {sa:?}"
            )));
        }
        let nb = numel(sb);
        let data = self.nodes[a.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| x + self.nodes[b.0].data[i % nb])
            .collect();
        let shape = sa.clone();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(data, shape, rg, Op::AddBroadcast(a.0, b.0)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0].data.iter().map(|&x| x.max(0.0)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::Relu(a.0))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0].data.iter().map(|&x| gelu_fwd(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::Gelu(a.0))
    }

    /// Numerically stable sigmoid, saturated into `[PROB_CLAMP_LO, PROB_CLAMP_HI]`
    /// so downstream logarithms stay finite.
    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| sigmoid_fwd(x).clamp(PROB_CLAMP_LO, PROB_CLAMP_HI))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::Sigmoid(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0].data.iter().map(|x| x.exp()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::Exp(a.0))
    }

    /// Natural log. Non-positive inputs are a domain error; clamp first.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.nodes[a.0].data.iter().find(|&&x| x <= 0.0) {
            return Err(Error::domain(format!("log of non-positive value {bad}")));
        }
        let data = self.nodes[a.0].data.iter().map(|x| x.ln()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(data, shape, rg, Op::Log(a.0)))
    }

    /// Elementwise clamp; gradient passes through inside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::domain(format!("clamp bounds invalid: [{lo}, {hi}]")));
        }
        let data = self.nodes[a.0]
            .data
            .iter()
            .map(|x| x.clamp(lo, hi))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(data, shape, rg, Op::Clamp { x: a.0, lo, hi }))
    }

    /// Rank-2 matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.distinct(&[a, b], "matmul")?;
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!(
                "matmul: invalid shapes {sa:?} x {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![0.0; m * n];
        kernels::matmul_acc(
            &self.nodes[a.0].data,
            &self.nodes[b.0].data,
            m,
            k,
            n,
            &mut data,
        );
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            data,
            vec![m, n],
            rg,
            Op::Matmul {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
        ))
    }

    /// Batched matrix product `[B,m,k] x [B,k,n] -> [B,m,n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        self.distinct(&[a, b], "bmm")?;
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape(format!("bmm: invalid shapes {sa:?} x {sb:?}")));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut data = vec![0.0; batch * m * n];
        for i in 0..batch {
            kernels::matmul_acc(
                &self.nodes[a.0].data[i * m * k..(i + 1) * m * k],
                &self.nodes[b.0].data[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
                &mut data[i * m * n..(i + 1) * m * n],
            );
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            data,
            vec![batch, m, n],
            rg,
            Op::Bmm {
                a: a.0,
                b: b.0,
                batch,
                m,
                k,
                n,
            },
        ))
    }

    /// 2-d convolution over NCHW input with kernel `[F,C,kh,kw]` and bias `[F]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        bias: Var,
        stride: usize,
        pad: usize,
        mode: PadMode,
    ) -> Result<Var> {
        self.distinct(&[x, k, bias], "conv2d")?;
        let (sx, sk, sb) = (
            &self.nodes[x.0].shape,
            &self.nodes[k.0].shape,
            &self.nodes[bias.0].shape,
        );
        if sx.len() != 4 || sk.len() != 4 {
            return Err(Error::shape(format!("conv2d: input {sx:?}, kernel {sk:?}")));
        }
        if stride == 0 {
            return Err(Error::config("conv2d: stride must be positive".to_string()));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (f, kc, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
        if kc != c || sb.as_slice() != [f] {
            return Err(Error::shape(format!(
                "conv2d: input {sx:?} incompatible with kernel {sk:?} / bias {sb:?}"
            )));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(format!(
                "conv2d: kernel {kh}x{kw} exceeds padded input {h}x{w} (pad {pad})"
            )));
        }
        let oh = kernels::conv_out_extent(h, kh, stride, pad);
        let ow = kernels::conv_out_extent(w, kw, stride, pad);
        let dims = ConvDims {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        };
        let mut data = vec![0.0; n * f * oh * ow];
        kernels::conv2d_fwd(
            &self.nodes[x.0].data,
            &self.nodes[k.0].data,
            &self.nodes[bias.0].data,
            &dims,
            mode,
            &mut data,
        );
        let rg = self.any_grad(&[x, k, bias]);
        Ok(self.push(
            data,
            vec![n, f, oh, ow],
            rg,
            Op::Conv2d {
                x: x.0,
                k: k.0,
                bias: bias.0,
                dims,
                mode,
            },
        ))
    }

    /// Transposed convolution with kernel extent equal to stride, kernel
    /// layout `[C,F,s,s]`: upsamples `[N,C,H,W]` to `[N,F,H*s,W*s]`.
    pub fn conv_transpose2d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        self.distinct(&[x, k], "conv_transpose2d")?;
        let (sx, sk) = (&self.nodes[x.0].shape, &self.nodes[k.0].shape);
        if sx.len() != 4 || sk.len() != 4 {
            return Err(Error::shape(format!(
                "conv_transpose2d: input {sx:?}, kernel {sk:?}"
            )));
        }
        if stride == 0 || sk[2] != stride || sk[3] != stride {
            return Err(Error::shape(format!(
                "conv_transpose2d: kernel extent {:?} must equal stride {stride}",
                &sk[2..]
            )));
        }
        if sk[0] != sx[1] {
            return Err(Error::shape(format!(
                "conv_transpose2d: kernel {sk:?} incompatible with input {sx:?}"
            )));
        }
        let dims = ConvTDims {
            n: sx[0],
            c: sx[1],
            h: sx[2],
            w: sx[3],
            f: sk[1],
            stride,
        };
        let mut data = vec![0.0; dims.n * dims.f * dims.h * stride * dims.w * stride];
        kernels::conv_transpose2d_fwd(
            &self.nodes[x.0].data,
            &self.nodes[k.0].data,
            &dims,
            &mut data,
        );
        let shape = vec![dims.n, dims.f, dims.h * stride, dims.w * stride];
        let rg = self.any_grad(&[x, k]);
        Ok(self.push(
            data,
            shape,
            rg,
            Op::ConvT2d {
                x: x.0,
                k: k.0,
                dims,
            },
        ))
    }

    /// 2x2 max pool with stride 2 over NCHW input; extents must be even.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let sx = &self.nodes[x.0].shape;
        if sx.len() != 4 || !sx[2].is_multiple_of(2) || !sx[3].is_multiple_of(2) {
            return Err(Error::shape(format!(
                "maxpool2d: input {sx:?} must be NCHW with even H and W"
            )));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let mut data = vec![0.0; n * c * (h / 2) * (w / 2)];
        let mut argmax = Vec::new();
        kernels::maxpool2d_fwd(&self.nodes[x.0].data, n, c, h, w, &mut data, &mut argmax);
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(
            data,
            vec![n, c, h / 2, w / 2],
            rg,
            Op::MaxPool { x: x.0, argmax },
        ))
    }

    /// Softmax along the last axis, with max subtraction for stability.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let sx = &self.nodes[x.0].shape;
        if sx.is_empty() {
            return Err(Error::shape("softmax: rank must be at least 1".to_string()));
        }
        let cols = sx[sx.len() - 1];
        let rows = numel(sx) / cols;
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &self.nodes[x.0].data[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[r * cols..(r + 1) * cols];
            let mut sum = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            out.iter_mut().for_each(|o| *o /= sum);
        }
        let shape = sx.clone();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(data, shape, rg, Op::Softmax { x: x.0, rows, cols }))
    }

    /// Layer norm over the last axis with per-feature gain and shift.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        self.distinct(&[x, gamma, beta], "layernorm")?;
        let sx = &self.nodes[x.0].shape;
        if sx.is_empty() {
            return Err(Error::shape(
                "layernorm: rank must be at least 1".to_string(),
            ));
        }
        let cols = sx[sx.len() - 1];
        let rows = numel(sx) / cols;
        if self.nodes[gamma.0].shape != [cols] || self.nodes[beta.0].shape != [cols] {
            return Err(Error::shape(format!(
                "layernorm: gamma/beta must have shape [{cols}]"
            )));
        }
        let mut data = vec![0.0; rows * cols];
        let mut mean = vec![0.0; rows];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &self.nodes[x.0].data[r * cols..(r + 1) * cols];
            let mu = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYERNORM_EPS).sqrt();
            mean[r] = mu;
            inv_std[r] = is;
            for j in 0..cols {
                let xhat = (row[j] - mu) * is;
                data[r * cols + j] =
                    xhat * self.nodes[gamma.0].data[j] + self.nodes[beta.0].data[j];
            }
        }
        let shape = sx.clone();
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            data,
            shape,
            rg,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                rows,
                cols,
                mean,
                inv_std,
            },
        ))
    }

    /// Concatenate along `axis`; all other extents must match.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat: no inputs".to_string()));
        }
        let rank = self.nodes[parts[0].0].shape.len();
        if axis >= rank {
            return Err(Error::shape(format!(
                "concat: axis {axis} out of range for rank {rank}"
            )));
        }
        let mut out_shape = self.nodes[parts[0].0].shape.clone();
        let mut extents = Vec::with_capacity(parts.len());
        out_shape[axis] = 0;
        for &p in parts {
            let sp = &self.nodes[p.0].shape;
            if sp.len() != rank {
                return Err(Error::shape("concat: rank mismatch".to_string()));
            }
            for d in 0..rank {
                if d != axis && sp[d] != out_shape[d] {
                    return Err(Error::shape(format!(
                        "concat: extent mismatch on axis {d}: {:?} vs {:?}",
                        sp, out_shape
                    )));
                }
            }
            extents.push(sp[axis]);
            out_shape[axis] += sp[axis];
        }
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let total_axis = out_shape[axis];
        let mut data = vec![0.0; outer * total_axis * inner];
        let mut offset = 0;
        for (pi, &p) in parts.iter().enumerate() {
            let e = extents[pi];
            let src = &self.nodes[p.0].data;
            for o in 0..outer {
                let dst_base = (o * total_axis + offset) * inner;
                let src_base = o * e * inner;
                data[dst_base..dst_base + e * inner]
                    .copy_from_slice(&src[src_base..src_base + e * inner]);
            }
            offset += e;
        }
        let rg = self.any_grad(parts);
        let part_ids = parts.iter().map(|p| p.0).collect();
        Ok(self.push(
            data,
            out_shape,
            rg,
            Op::Concat {
                parts: part_ids,
                outer,
                inner,
                extents,
            },
        ))
    }

    /// Reinterpret the element order under a new shape of equal size.
    pub fn reshape(&mut self, x: Var, new_shape: &[usize]) -> Result<Var> {
        if numel(new_shape) != self.nodes[x.0].data.len() {
            return Err(Error::shape(format!(
                "reshape: {:?} -> {new_shape:?} changes element count",
                self.nodes[x.0].shape
            )));
        }
        let data = self.nodes[x.0].data.clone();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(data, new_shape.to_vec(), rg, Op::Reshape(x.0)))
    }

    /// Reorder axes: output axis `j` is input axis `order[j]`.
    pub fn permute(&mut self, x: Var, order: &[usize]) -> Result<Var> {
        let sx = &self.nodes[x.0].shape;
        let rank = sx.len();
        let mut seen = vec![false; rank];
        if order.len() != rank
            || order
                .iter()
                .any(|&d| d >= rank || std::mem::replace(&mut seen[d], true))
        {
            return Err(Error::shape(format!(
                "permute: {order:?} is not a permutation of 0..{rank}"
            )));
        }
        let out_shape: Vec<usize> = order.iter().map(|&d| sx[d]).collect();
        let data = permute_data(&self.nodes[x.0].data, sx, order, &out_shape);
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(
            data,
            out_shape,
            rg,
            Op::Permute {
                x: x.0,
                order: order.to_vec(),
            },
        ))
    }

    /// Diagonal state-space scan over `[N,T,D]` input.
    ///
    /// Per channel `d` and state `s`: `h_t = decay*h_(t-1) + b*x_t`,
    /// `y_t[d] = sum_s c[d,s]*h_t[d,s]`. `decay`, `b`, `c` all have shape
    /// `[D,S]`. With `reversed` the scan runs from the last token backward.
    pub fn ssm_scan(&mut self, x: Var, decay: Var, b: Var, c: Var, reversed: bool) -> Result<Var> {
        self.distinct(&[x, decay, b, c], "ssm_scan")?;
        let sx = &self.nodes[x.0].shape;
        if sx.len() != 3 {
            return Err(Error::shape(format!(
                "ssm_scan: input must be [N,T,D], got {sx:?}"
            )));
        }
        let (n, t, d) = (sx[0], sx[1], sx[2]);
        let sd = &self.nodes[decay.0].shape;
        if sd.len() != 2 || sd[0] != d {
            return Err(Error::shape(format!(
                "ssm_scan: coefficients must be [D={d},S], got {sd:?}"
            )));
        }
        let s = sd[1];
        for (name, v) in [("b", b), ("c", c)] {
            if self.nodes[v.0].shape != [d, s] {
                return Err(Error::shape(format!(
                    "ssm_scan: {name} must have shape [{d},{s}], got {:?}",
                    self.nodes[v.0].shape
                )));
            }
        }
        let mut data = vec![0.0; n * t * d];
        let mut states = vec![0.0; n * t * d * s];
        let decay_d = &self.nodes[decay.0].data;
        let b_d = &self.nodes[b.0].data;
        let c_d = &self.nodes[c.0].data;
        let x_d = &self.nodes[x.0].data;
        for ni in 0..n {
            let mut h = vec![0.0; d * s];
            let steps: Vec<usize> = if reversed {
                (0..t).rev().collect()
            } else {
                (0..t).collect()
            };
            for &ti in &steps {
                for di in 0..d {
                    let xv = x_d[(ni * t + ti) * d + di];
                    let mut acc = 0.0;
                    for si in 0..s {
                        let ds = di * s + si;
                        let hv = decay_d[ds] * h[ds] + b_d[ds] * xv;
                        h[ds] = hv;
                        states[((ni * t + ti) * d + di) * s + si] = hv;
                        acc += c_d[ds] * hv;
                    }
                    data[(ni * t + ti) * d + di] = acc;
                }
            }
        }
        let rg = self.any_grad(&[x, decay, b, c]);
        Ok(self.push(
            data,
            vec![n, t, d],
            rg,
            Op::SsmScan {
                x: x.0,
                decay: decay.0,
                input_c: b.0,
                output_c: c.0,
                reversed,
                states,
            },
        ))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.nodes[x.0].data.iter().sum();
        let rg = self.nodes[x.0].requires_grad;
        self.push(vec![total], vec![1], rg, Op::Sum(x.0))
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].data.len() as f64;
        let total: f64 = self.nodes[x.0].data.iter().sum();
        let rg = self.nodes[x.0].requires_grad;
        self.push(vec![total / n], vec![1], rg, Op::Mean(x.0))
    }

    fn distinct(&self, vars: &[Var], what: &str) -> Result<()> {
        for i in 0..vars.len() {
            for j in i + 1..vars.len() {
                if vars[i] == vars[j] {
                    return Err(Error::domain(format!(
                        "{what}: operands must be distinct tape nodes"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Reverse sweep from a scalar loss. Every `requires_grad` node receives
    /// a gradient buffer (zeros when unreachable from the loss). A tape can
    /// run backward once; a second call is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.ran_backward {
            return Err(Error::domain("backward already ran on this tape"));
        }
        self.ran_backward = true;
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::shape(format!(
                "backward: loss must be scalar, got {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = self
            .nodes
            .iter()
            .map(|n| n.requires_grad.then(|| vec![0.0; n.data.len()]))
            .collect();
        if let Some(g) = grads[loss.0].as_mut() {
            g[0] = 1.0;
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = g;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let axpy = |dst: &mut Option<Vec<f64>>, f: &mut dyn FnMut(&mut [f64])| {
            if let Some(d) = dst.as_deref_mut() {
                f(d);
            }
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                axpy(&mut grads[*a], &mut |d| {
                    d.iter_mut().zip(g).for_each(|(x, gv)| *x += gv)
                });
                axpy(&mut grads[*b], &mut |d| {
                    if d.len() == 1 {
                        d[0] += g.iter().sum::<f64>();
                    } else {
                        d.iter_mut().zip(g).for_each(|(x, gv)| *x += gv)
                    }
                });
            }
            Op::Sub(a, b) => {
                axpy(&mut grads[*a], &mut |d| {
                    d.iter_mut().zip(g).for_each(|(x, gv)| *x += gv)
                });
                axpy(&mut grads[*b], &mut |d| {
                    if d.len() == 1 {
                        d[0] -= g.iter().sum::<f64>();
                    } else {
                        d.iter_mut().zip(g).for_each(|(x, gv)| *x -= gv)
                    }
                });
            }
            Op::Mul(a, b) => {
                let (da, db) = (&nodes[*a].data, &nodes[*b].data);
                axpy(&mut grads[*a], &mut |d| {
                    if db.len() == 1 {
                        d.iter_mut().zip(g).for_each(|(x, gv)| *x += gv * db[0]);
                    } else {
                        for j in 0..d.len() {
                            d[j] += g[j] * db[j];
                        }
                    }
                });
                axpy(&mut grads[*b], &mut |d| {
                    if d.len() == 1 {
                        d[0] += g.iter().zip(da).map(|(gv, av)| gv * av).sum::<f64>();
                    } else {
                        for j in 0..d.len() {
                            d[j] += g[j] * da[j];
                        }
                    }
                });
            }
            Op::AddScalar(a) => {
                axpy(&mut grads[*a], &mut |d| {
                    d.iter_mut().zip(g).for_each(|(x, gv)| *x += gv)
                });
            }
            Op::MulScalar(a, c) => {
                axpy(&mut grads[*a], &mut |d| {
                    d.iter_mut().zip(g).for_each(|(x, gv)| *x += gv * c)
                });
            }
            Op::AddBroadcast(a, b) => {
                axpy(&mut grads[*a], &mut |d| {
                    d.iter_mut().zip(g).for_each(|(x, gv)| *x += gv)
                });
                axpy(&mut grads[*b], &mut |d| {
                    let nb = d.len();
                    for (j, gv) in g.iter().enumerate() {
                        d[j % nb] += gv;
                    }
                });
            }
            Op::Relu(a) => {
                let xa = &nodes[*a].data;
                axpy(&mut grads[*a], &mut |d| {
                    for j in 0..d.len() {
                        if xa[j] > 0.0 {
                            d[j] += g[j];
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let xa = &nodes[*a].data;
                axpy(&mut grads[*a], &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * gelu_grad(xa[j]);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = &nodes[i].data;
                axpy(&mut grads[*a], &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * y[j] * (1.0 - y[j]);
                    }
                });
            }
            Op::Exp(a) => {
                let y = &nodes[i].data;
                axpy(&mut grads[*a], &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * y[j];
                    }
                });
            }
            Op::Log(a) => {
                let xa = &nodes[*a].data;
                axpy(&mut grads[*a], &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] / xa[j];
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let xa = &nodes[*x].data;
                axpy(&mut grads[*x], &mut |d| {
                    for j in 0..d.len() {
                        if xa[j] >= *lo && xa[j] <= *hi {
                            d[j] += g[j];
                        }
                    }
                });
            }
            Op::Matmul { a, b, m, k, n } => {
                let (da, db) = (&nodes[*a].data, &nodes[*b].data);
                axpy(&mut grads[*a], &mut |d| {
                    kernels::matmul_nt_acc(g, db, *m, *n, *k, d)
                });
                axpy(&mut grads[*b], &mut |d| {
                    kernels::matmul_tn_acc(da, g, *m, *k, *n, d)
                });
            }
            Op::Bmm {
                a,
                b,
                batch,
                m,
                k,
                n,
            } => {
                let (da, db) = (&nodes[*a].data, &nodes[*b].data);
                axpy(&mut grads[*a], &mut |d| {
                    for i in 0..*batch {
                        kernels::matmul_nt_acc(
                            &g[i * m * n..(i + 1) * m * n],
                            &db[i * k * n..(i + 1) * k * n],
                            *m,
                            *n,
                            *k,
                            &mut d[i * m * k..(i + 1) * m * k],
                        );
                    }
                });
                axpy(&mut grads[*b], &mut |d| {
                    for i in 0..*batch {
                        kernels::matmul_tn_acc(
                            &da[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            *m,
                            *k,
                            *n,
                            &mut d[i * k * n..(i + 1) * k * n],
                        );
                    }
                });
            }
            Op::Conv2d {
                x,
                k,
                bias,
                dims,
                mode,
            } => {
                let (dx, dk) = (&nodes[*x].data, &nodes[*k].data);
                let (mut gx, mut gk, mut gb) =
                    (grads[*x].take(), grads[*k].take(), grads[*bias].take());
                kernels::conv2d_bwd(
                    dx,
                    dk,
                    g,
                    dims,
                    *mode,
                    gx.as_deref_mut(),
                    gk.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                grads[*x] = gx;
                grads[*k] = gk;
                grads[*bias] = gb;
            }
            Op::ConvT2d { x, k, dims } => {
                let (dx, dk) = (&nodes[*x].data, &nodes[*k].data);
                let (mut gx, mut gk) = (grads[*x].take(), grads[*k].take());
                kernels::conv_transpose2d_bwd(
                    dx,
                    dk,
                    g,
                    dims,
                    gx.as_deref_mut(),
                    gk.as_deref_mut(),
                );
                grads[*x] = gx;
                grads[*k] = gk;
            }
            Op::MaxPool { x, argmax } => {
                axpy(&mut grads[*x], &mut |d| {
                    for (o, &src) in argmax.iter().enumerate() {
                        d[src] += g[o];
                    }
                });
            }
            Op::Softmax { x, rows, cols } => {
                let y = &nodes[i].data;
                axpy(&mut grads[*x], &mut |d| {
                    for r in 0..*rows {
                        let base = r * cols;
                        let dot: f64 = (0..*cols).map(|j| g[base + j] * y[base + j]).sum();
                        for j in 0..*cols {
                            d[base + j] += y[base + j] * (g[base + j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                rows,
                cols,
                mean,
                inv_std,
            } => {
                let dx_in = &nodes[*x].data;
                let dgamma_in = &nodes[*gamma].data;
                axpy(&mut grads[*beta], &mut |d| {
                    for r in 0..*rows {
                        for j in 0..*cols {
                            d[j] += g[r * cols + j];
                        }
                    }
                });
                axpy(&mut grads[*gamma], &mut |d| {
                    for r in 0..*rows {
                        for j in 0..*cols {
                            let xhat = (dx_in[r * cols + j] - mean[r]) * inv_std[r];
                            d[j] += g[r * cols + j] * xhat;
                        }
                    }
                });
                axpy(&mut grads[*x], &mut |d| {
                    let cf = *cols as f64;
                    for r in 0..*rows {
                        let base = r * cols;
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..*cols {
                            let xhat = (dx_in[base + j] - mean[r]) * inv_std[r];
                            let dxhat = g[base + j] * dgamma_in[j];
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * xhat;
                        }
                        mean_dxhat /= cf;
                        mean_dxhat_xhat /= cf;
                        for j in 0..*cols {
                            let xhat = (dx_in[base + j] - mean[r]) * inv_std[r];
                            let dxhat = g[base + j] * dgamma_in[j];
                            d[base + j] +=
                                inv_std[r] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                        }
                    }
                });
            }
            Op::Concat {
                parts,
                outer,
                inner,
                extents,
            } => {
                let total_axis: usize = extents.iter().sum();
                let mut offset = 0;
                for (pi, &p) in parts.iter().enumerate() {
                    let e = extents[pi];
                    axpy(&mut grads[p], &mut |d| {
                        for o in 0..*outer {
                            let src_base = (o * total_axis + offset) * inner;
                            let dst_base = o * e * inner;
                            for j in 0..e * inner {
                                d[dst_base + j] += g[src_base + j];
                            }
                        }
                    });
                    offset += e;
                }
            }
            Op::Reshape(a) => {
                axpy(&mut grads[*a], &mut |d| {
                    d.iter_mut().zip(g).for_each(|(x, gv)| *x += gv)
                });
            }
            Op::Permute { x, order } => {
                let in_shape = &nodes[*x].shape;
                let out_shape = &nodes[i].shape;
                axpy(&mut grads[*x], &mut |d| {
                    permute_acc(g, out_shape, order, in_shape, d);
                });
            }
            Op::SsmScan {
                x,
                decay,
                input_c,
                output_c,
                reversed,
                states,
            } => {
                let sx = &nodes[*x].shape;
                let (n, t, dch) = (sx[0], sx[1], sx[2]);
                let s = nodes[*decay].shape[1];
                let decay_d = &nodes[*decay].data;
                let b_d = &nodes[*input_c].data;
                let c_d = &nodes[*output_c].data;
                let x_d = &nodes[*x].data;
                let mut gx = grads[*x].take();
                let mut ga = grads[*decay].take();
                let mut gb = grads[*input_c].take();
                let mut gc = grads[*output_c].take();
                let steps: Vec<usize> = if *reversed {
                    (0..t).collect()
                } else {
                    (0..t).rev().collect()
                };
                for ni in 0..n {
                    let mut carry = vec![0.0; dch * s];
                    for &ti in &steps {
                        // Scan-order predecessor of ti, which holds h_(t-1).
                        let prev_ti = if *reversed {
                            (ti + 1 < t).then(|| ti + 1)
                        } else {
                            ti.checked_sub(1)
                        };
                        for di in 0..dch {
                            let gy = g[(ni * t + ti) * dch + di];
                            let xv = x_d[(ni * t + ti) * dch + di];
                            let mut gx_acc = 0.0;
                            for si in 0..s {
                                let ds = di * s + si;
                                let h = states[((ni * t + ti) * dch + di) * s + si];
                                let h_prev = match prev_ti {
                                    Some(p) => states[((ni * t + p) * dch + di) * s + si],
                                    None => 0.0,
                                };
                                let dh = gy * c_d[ds] + carry[ds];
                                if let Some(gc) = gc.as_deref_mut() {
                                    gc[ds] += gy * h;
                                }
                                if let Some(ga) = ga.as_deref_mut() {
                                    ga[ds] += dh * h_prev;
                                }
                                if let Some(gb) = gb.as_deref_mut() {
                                    gb[ds] += dh * xv;
                                }
                                gx_acc += dh * b_d[ds];
                                carry[ds] = decay_d[ds] * dh;
                            }
                            if let Some(gx) = gx.as_deref_mut() {
                                gx[(ni * t + ti) * dch + di] += gx_acc;
                            }
                        }
                    }
                }
                grads[*x] = gx;
                grads[*decay] = ga;
                grads[*input_c] = gb;
                grads[*output_c] = gc;
            }
            Op::Sum(a) => {
                axpy(&mut grads[*a], &mut |d| {
                    d.iter_mut().for_each(|x| *x += g[0]);
                });
            }
            Op::Mean(a) => {
                axpy(&mut grads[*a], &mut |d| {
                    let scale = g[0] / d.len() as f64;
                    d.iter_mut().for_each(|x| *x += scale);
                });
            }
        }
    }
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

fn permute_data(src: &[f64], in_shape: &[usize], order: &[usize], out_shape: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    let in_strides = strides_of(in_shape);
    let out_strides = strides_of(out_shape);
    let rank = in_shape.len();
    let mut coords = vec![0usize; rank];
    for (flat, &v) in src.iter().enumerate() {
        let mut rem = flat;
        for d in 0..rank {
            coords[d] = rem / in_strides[d];
            rem %= in_strides[d];
        }
        let mut out_flat = 0;
        for j in 0..rank {
            out_flat += coords[order[j]] * out_strides[j];
        }
        out[out_flat] = v;
    }
    out
}

/// Accumulate the permuted gradient back onto the input layout.
fn permute_acc(
    g_out: &[f64],
    out_shape: &[usize],
    order: &[usize],
    in_shape: &[usize],
    g_in: &mut [f64],
) {
    let in_strides = strides_of(in_shape);
    let out_strides = strides_of(out_shape);
    let rank = in_shape.len();
    let mut coords = vec![0usize; rank];
    for (flat, g) in g_in.iter_mut().enumerate() {
        let mut rem = flat;
        for d in 0..rank {
            coords[d] = rem / in_strides[d];
            rem %= in_strides[d];
        }
        let mut out_flat = 0;
        for j in 0..rank {
            out_flat += coords[order[j]] * out_strides[j];
        }
        *g += g_out[out_flat];
    }
}

fn sigmoid_fwd(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797884560802865; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu_fwd(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
