//! The bundled gradient suite: every differentiable primitive under several
//! random instances, then all four architectures end to end through BCE.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{grad_check, model_param_grad_check, CheckOutcome, DEFAULT_H};
use crate::arch::{Arch, Model, ModelConfig};
use crate::error::Result;
use crate::layers::InitPolicy;
use crate::rng::stream;
use crate::tensor::{PadMode, Tape, Tensor, Var};
use crate::train::bce;

const SUITE_SEED: u64 = 0x5eed_ceec;
const INSTANCES: usize = 5;

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Case {
    f: OpFn,
    inputs: Vec<Tensor>,
}

fn rng_for(entry: u64, instance: usize) -> ChaCha8Rng {
    stream(SUITE_SEED, &[entry, instance as u64])
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::rand_uniform(shape, lo, hi, rng)
}

/// Values bounded away from zero, mixed sign: safe sample points for kinked
/// maps like ReLU under finite differences.
fn nonzero(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let mut t = uniform(shape, 0.1, 1.0, rng);
    for v in &mut t.data {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

fn binary(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in &mut t.data {
        *v = f64::from(rng.gen_range(0..2u32));
    }
    t
}

/// `sum(y * y)` — a nontrivial upstream gradient for the op under test.
fn sq_sum(tape: &mut Tape, y: Var) -> Result<Var> {
    let sq = tape.mul(y, y)?;
    Ok(tape.sum(sq))
}

fn run(name: &str, cases: Vec<Case>) -> Result<CheckOutcome> {
    let mut max_rel_err = 0.0f64;
    for case in &cases {
        max_rel_err = max_rel_err.max(grad_check(&case.f, &case.inputs, DEFAULT_H)?);
    }
    Ok(CheckOutcome {
        name: name.to_string(),
        instances: cases.len(),
        max_rel_err,
    })
}

fn elementwise_entry(
    name: &str,
    entry: u64,
    sample: fn(&[usize], &mut ChaCha8Rng) -> Tensor,
    apply: fn(&mut Tape, Var) -> Result<Var>,
) -> Result<CheckOutcome> {
    let cases = (0..INSTANCES)
        .map(|i| {
            let mut rng = rng_for(entry, i);
            Case {
                f: Box::new(move |tape, v| {
                    let y = apply(tape, v[0])?;
                    sq_sum(tape, y)
                }),
                inputs: vec![sample(&[2, 3 + i], &mut rng)],
            }
        })
        .collect();
    run(name, cases)
}

fn binary_entry(
    name: &str,
    entry: u64,
    apply: fn(&mut Tape, Var, Var) -> Result<Var>,
) -> Result<CheckOutcome> {
    let cases = (0..INSTANCES)
        .map(|i| {
            let mut rng = rng_for(entry, i);
            let shape = [2, 2 + i];
            Case {
                f: Box::new(move |tape, v| {
                    let y = apply(tape, v[0], v[1])?;
                    sq_sum(tape, y)
                }),
                inputs: vec![
                    uniform(&shape, -1.0, 1.0, &mut rng),
                    uniform(&shape, -1.0, 1.0, &mut rng),
                ],
            }
        })
        .collect();
    run(name, cases)
}

/// Run the full suite. Entry order is fixed so reports are comparable
/// across runs.
pub fn suite() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();

    out.push(binary_entry("add", 0, |t, a, b| t.add(a, b))?);
    out.push(binary_entry("sub", 1, |t, a, b| t.sub(a, b))?);
    out.push(binary_entry("mul", 2, |t, a, b| t.mul(a, b))?);

    out.push(run(
        "add_scalar",
        (0..INSTANCES)
            .map(|i| {
                let mut rng = rng_for(3, i);
                let c = 0.7 * i as f64 - 1.0;
                Case {
                    f: Box::new(move |tape, v| {
                        let y = tape.add_scalar(v[0], c);
                        sq_sum(tape, y)
                    }),
                    inputs: vec![uniform(&[3, 1 + i], -1.0, 1.0, &mut rng)],
                }
            })
            .collect(),
    )?);
    out.push(run(
        "mul_scalar",
        (0..INSTANCES)
            .map(|i| {
                let mut rng = rng_for(4, i);
                let c = -1.3 + i as f64;
                Case {
                    f: Box::new(move |tape, v| {
                        let y = tape.mul_scalar(v[0], c);
                        sq_sum(tape, y)
                    }),
                    inputs: vec![uniform(&[3, 1 + i], -1.0, 1.0, &mut rng)],
                }
            })
            .collect(),
    )?);

    out.push(run(
        "add_broadcast",
        (0..INSTANCES)
            .map(|i| {
                let mut rng = rng_for(5, i);
                let a = uniform(&[2, 3, 2 + i], -1.0, 1.0, &mut rng);
                let b = if i % 2 == 0 {
                    uniform(&[2 + i], -1.0, 1.0, &mut rng)
                } else {
                    uniform(&[3, 2 + i], -1.0, 1.0, &mut rng)
                };
                Case {
                    f: Box::new(|tape, v| {
                        let y = tape.add_broadcast(v[0], v[1])?;
                        sq_sum(tape, y)
                    }),
                    inputs: vec![a, b],
                }
            })
            .collect(),
    )?);

    out.push(elementwise_entry("relu", 6, nonzero, |t, v| Ok(t.relu(v)))?);
    out.push(elementwise_entry(
        "gelu",
        7,
        |s, r| uniform(s, -2.0, 2.0, r),
        |t, v| Ok(t.gelu(v)),
    )?);
    out.push(elementwise_entry(
        "sigmoid",
        8,
        |s, r| uniform(s, -3.0, 3.0, r),
        |t, v| Ok(t.sigmoid(v)),
    )?);
    out.push(elementwise_entry(
        "exp",
        9,
        |s, r| uniform(s, -1.0, 1.0, r),
        |t, v| Ok(t.exp(v)),
    )?);
    out.push(elementwise_entry(
        "log",
        10,
        |s, r| uniform(s, 0.2, 2.0, r),
        |t, v| t.log(v),
    )?);

    out.push(run(
        "clamp",
        (0..INSTANCES)
            .map(|i| {
                let mut rng = rng_for(11, i);
                // Keep samples clear of the clamp bounds so the central
                // difference never straddles the kink.
                let mut x = uniform(&[2, 3 + i], -1.0, 1.0, &mut rng);
                for v in &mut x.data {
                    if (v.abs() - 0.5).abs() < 0.01 {
                        *v = 0.3;
                    }
                }
                Case {
                    f: Box::new(|tape, v| {
                        let y = tape.clamp(v[0], -0.5, 0.5)?;
                        sq_sum(tape, y)
                    }),
                    inputs: vec![x],
                }
            })
            .collect(),
    )?);

    out.push(run(
        "matmul",
        (0..INSTANCES)
            .map(|i| {
                let mut rng = rng_for(12, i);
                Case {
                    f: Box::new(|tape, v| {
                        let y = tape.matmul(v[0], v[1])?;
                        sq_sum(tape, y)
                    }),
                    inputs: vec![
                        uniform(&[2 + i % 2, 3], -1.0, 1.0, &mut rng),
                        uniform(&[3, 1 + i], -1.0, 1.0, &mut rng),
                    ],
                }
            })
            .collect(),
    )?);
    out.push(run(
        "bmm",
        (0..INSTANCES)
            .map(|i| {
                let mut rng = rng_for(13, i);
                let k = 1 + i % 3;
                Case {
                    f: Box::new(|tape, v| {
                        let y = tape.bmm(v[0], v[1])?;
                        sq_sum(tape, y)
                    }),
                    inputs: vec![
                        uniform(&[2, 2, k], -1.0, 1.0, &mut rng),
                        uniform(&[2, k, 3], -1.0, 1.0, &mut rng),
                    ],
                }
            })
            .collect(),
    )?);

    for (name, entry, mode) in [
        ("conv2d", 14, PadMode::Zero),
        ("conv2d_periodic", 15, PadMode::Periodic),
    ] {
        out.push(run(
            name,
            (0..INSTANCES)
                .map(|i| {
                    let mut rng = rng_for(entry, i);
                    let c = 1 + i % 2;
                    let stride = 1 + i % 2;
                    Case {
                        f: Box::new(move |tape, v| {
                            let y = tape.conv2d(v[0], v[1], v[2], stride, 1, mode)?;
                            sq_sum(tape, y)
                        }),
                        inputs: vec![
                            uniform(&[1 + i % 2, c, 4, 5], -1.0, 1.0, &mut rng),
                            uniform(&[2, c, 3, 3], -1.0, 1.0, &mut rng),
                            uniform(&[2], -1.0, 1.0, &mut rng),
                        ],
                    }
                })
                .collect(),
        )?);
    }

    out.push(run(
        "conv_transpose2d",
        (0..INSTANCES)
            .map(|i| {
                let mut rng = rng_for(16, i);
                let f = 1 + i % 2;
                Case {
                    f: Box::new(|tape, v| {
                        let y = tape.conv_transpose2d(v[0], v[1], 2)?;
                        sq_sum(tape, y)
                    }),
                    inputs: vec![
                        uniform(&[1, 2, 2, 2 + i % 2], -1.0, 1.0, &mut rng),
                        uniform(&[2, f, 2, 2], -1.0, 1.0, &mut rng),
                    ],
                }
            })
            .collect(),
    )?);

    out.push(run(
        "maxpool2d",
        (0..INSTANCES)
            .map(|i| {
                let mut rng = rng_for(17, i);
                Case {
                    f: Box::new(|tape, v| {
                        let y = tape.maxpool2d(v[0])?;
                        sq_sum(tape, y)
                    }),
                    inputs: vec![uniform(
                        &[1, 1 + i % 2, 4, 4 + 2 * (i % 2)],
                        -1.0,
                        1.0,
                        &mut rng,
                    )],
                }
            })
            .collect(),
    )?);

    out.push(run(
        "softmax",
        (0..INSTANCES)
            .map(|i| {
                let mut rng = rng_for(18, i);
                Case {
                    f: Box::new(|tape, v| {
                        let y = tape.softmax(v[0])?;
                        sq_sum(tape, y)
                    }),
                    inputs: vec![uniform(&[2, 3 + i % 3], -2.0, 2.0, &mut rng)],
                }
            })
            .collect(),
    )?);

    out.push(run(
        "layernorm",
        (0..INSTANCES)
            .map(|i| {
                let mut rng = rng_for(19, i);
                let d = 3 + i % 3;
                Case {
                    f: Box::new(|tape, v| {
                        let y = tape.layernorm(v[0], v[1], v[2])?;
                        sq_sum(tape, y)
                    }),
                    inputs: vec![
                        uniform(&[2, d], -1.0, 1.0, &mut rng),
                        uniform(&[d], 0.5, 1.5, &mut rng),
                        uniform(&[d], -0.5, 0.5, &mut rng),
                    ],
                }
            })
            .collect(),
    )?);

    out.push(run(
        "concat",
        (0..INSTANCES)
            .map(|i| {
                let mut rng = rng_for(20, i);
                let axis = i % 2;
                Case {
                    f: Box::new(move |tape, v| {
                        let y = tape.concat(v, axis)?;
                        sq_sum(tape, y)
                    }),
                    inputs: (0..3)
                        .map(|p| {
                            let shape = if axis == 0 {
                                [1 + p % 2, 3]
                            } else {
                                [2, 1 + p]
                            };
                            uniform(&shape, -1.0, 1.0, &mut rng)
                        })
                        .collect(),
                }
            })
            .collect(),
    )?);

    out.push(run(
        "reshape",
        (0..INSTANCES)
            .map(|i| {
                let mut rng = rng_for(21, i);
                Case {
                    f: Box::new(|tape, v| {
                        let y = tape.reshape(v[0], &[3, 4])?;
                        sq_sum(tape, y)
                    }),
                    inputs: vec![uniform(&[2, 6], -1.0, 1.0, &mut rng)],
                }
            })
            .collect(),
    )?);
    out.push(run(
        "permute",
        (0..INSTANCES)
            .map(|i| {
                let mut rng = rng_for(22, i);
                Case {
                    f: Box::new(|tape, v| {
                        let y = tape.permute(v[0], &[2, 0, 1])?;
                        sq_sum(tape, y)
                    }),
                    inputs: vec![uniform(&[2, 3, 1 + i], -1.0, 1.0, &mut rng)],
                }
            })
            .collect(),
    )?);

    for (name, entry, reversed) in [("ssm_scan", 23, false), ("ssm_scan_rev", 24, true)] {
        out.push(run(
            name,
            (0..INSTANCES)
                .map(|i| {
                    let mut rng = rng_for(entry, i);
                    let d = 2 + i % 2;
                    let s = 2;
                    Case {
                        f: Box::new(move |tape, v| {
                            let y = tape.ssm_scan(v[0], v[1], v[2], v[3], reversed)?;
                            sq_sum(tape, y)
                        }),
                        inputs: vec![
                            uniform(&[2, 3, d], -1.0, 1.0, &mut rng),
                            uniform(&[d, s], 0.1, 0.9, &mut rng),
                            uniform(&[d, s], -1.0, 1.0, &mut rng),
                            uniform(&[d, s], -1.0, 1.0, &mut rng),
                        ],
                    }
                })
                .collect(),
        )?);
    }

    out.push(elementwise_entry(
        "sum",
        25,
        |s, r| uniform(s, -1.0, 1.0, r),
        |t, v| Ok(t.sum(v)),
    )?);
    out.push(elementwise_entry(
        "mean",
        26,
        |s, r| uniform(s, -1.0, 1.0, r),
        |t, v| Ok(t.mean(v)),
    )?);

    out.push(run(
        "bce",
        (0..INSTANCES)
            .map(|i| {
                let mut rng = rng_for(27, i);
                let shape = [2, 3 + i % 2];
                let target = binary(&shape, &mut rng);
                Case {
                    f: Box::new(move |tape, v| {
                        let t = tape.constant(&target);
                        bce(tape, v[0], t)
                    }),
                    inputs: vec![uniform(&shape, 0.1, 0.9, &mut rng)],
                }
            })
            .collect(),
    )?);

    for (entry, arch) in [
        (28, Arch::Cnn),
        (29, Arch::Unet),
        (30, Arch::Vit),
        (31, Arch::Vssm),
    ] {
        let mut cfg = ModelConfig::with_arch(arch);
        cfg.features = match arch {
            Arch::Cnn | Arch::Unet => 2,
            Arch::Vit => 4,
            Arch::Vssm => 3,
        };
        cfg.depth = 1;
        cfg.patch = 2;
        cfg.heads = 2;
        cfg.state_dim = 2;
        let mut max_rel_err = 0.0f64;
        for i in 0..INSTANCES {
            let mut rng = rng_for(entry, i);
            let n = 1 + i % 2;
            let x = uniform(&[n, 1, 4, 4], 0.05, 0.95, &mut rng);
            let target = binary(&[n, 1, 4, 4], &mut rng);
            let seed = SUITE_SEED ^ (entry * 8 + i as u64);
            let mut model = Model::build(&cfg, InitPolicy { seed })?;
            // Zero-initialized biases can park pre-activations exactly on
            // the ReLU kink; jitter every parameter off zero.
            model.visit_params(&mut |_, t| {
                for v in &mut t.data {
                    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    *v += sign * rng.gen_range(0.01..0.05);
                }
            });
            let err = model_param_grad_check(&mut model, &x, &target, DEFAULT_H)?;
            max_rel_err = max_rel_err.max(err);
        }
        out.push(CheckOutcome {
            name: arch.name().to_string(),
            instances: INSTANCES,
            max_rel_err,
        });
    }

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::rel_err;

    #[test]
    fn rel_err_floors_small_magnitudes() {
        assert!(rel_err(0.0, 1e-12) < 1e-3);
        assert!((rel_err(1.0, 2.0) - 0.5).abs() < 1e-12);
    }
}
