//! Central-difference gradient verification.
//!
//! [`grad_check`] compares the tape's analytic gradients against finite
//! differences of the same scalar function and reports the worst relative
//! error. [`suite`] bundles the checks used by both the test suite and the
//! `gradcheck` CLI verb: every differentiable primitive plus all four
//! architectures end to end through the BCE loss.

use crate::arch::Model;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use crate::train::bce;

/// Default central-difference step.
pub const DEFAULT_H: f64 = 1e-5;

/// Acceptance threshold on the worst relative error.
pub const GRAD_TOL: f64 = 1e-4;

/// Relative error with an absolute floor so near-zero pairs compare sanely.
/// Central differences at `h = 1e-5` on order-one functions carry about
/// `eps * |f| / (2h) ~ 1e-11` of cancellation noise, so gradients below the
/// floor (for example ones that are exactly zero by symmetry) are compared
/// absolutely against it rather than against the noise.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Verify the tape gradient of a scalar-valued function.
///
/// `f` receives a fresh tape plus one leaf per entry of `inputs` (all marked
/// differentiable) and must return a single-element output. Every input
/// element is perturbed by `±h` and the central difference is compared with
/// the analytic gradient; the maximum relative error over all elements is
/// returned.
pub fn grad_check<F>(f: &F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.constant(t)).collect();
        let out = f(&mut tape, &vars)?;
        if tape.data(out).len() != 1 {
            return Err(Error::shape(format!(
                "grad_check: function output must be scalar, got {:?}",
                tape.shape(out)
            )));
        }
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let mut bound: Vec<Tensor> = inputs.iter().map(|t| t.clone().with_grad()).collect();
    let vars: Vec<Var> = bound.iter_mut().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars)?;
    if tape.data(out).len() != 1 {
        return Err(Error::shape(format!(
            "grad_check: function output must be scalar, got {:?}",
            tape.shape(out)
        )));
    }
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("leaf requires grad").to_vec())
        .collect();

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for (i, grads) in analytic.iter().enumerate() {
        for (j, &exact) in grads.iter().enumerate() {
            let orig = work[i].data[j];
            work[i].data[j] = orig + h;
            let fp = eval(&work)?;
            work[i].data[j] = orig - h;
            let fm = eval(&work)?;
            work[i].data[j] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(rel_err(exact, numeric));
        }
    }
    Ok(worst)
}

/// One named entry of the gradient suite.
pub struct CheckOutcome {
    pub name: String,
    pub instances: usize,
    pub max_rel_err: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < GRAD_TOL
    }
}

/// Compare the model's analytic parameter gradients against central
/// differences of the BCE loss on a fixed `(x, target)` batch. Returns the
/// worst relative error over every parameter element. The caller should keep
/// pre-activations away from ReLU kinks (zero-initialized biases can park
/// them exactly at zero, where no two-sided derivative exists): jitter the
/// parameters first.
pub fn model_param_grad_check(
    model: &mut Model,
    x: &Tensor,
    target: &Tensor,
    h: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let y = model.forward(&mut tape, xv)?;
    let tv = tape.constant(target);
    let loss = bce(&mut tape, y, tv)?;
    tape.backward(loss)?;
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    let mut failure: Option<Error> = None;
    model.visit_params(&mut |_, t| {
        if failure.is_some() {
            return;
        }
        match tape.collect_grad(t) {
            Ok(()) => analytic.push(t.grad.clone().expect("grad was collected")),
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    let eval = |model: &mut Model| -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = model.forward(&mut tape, xv)?;
        let tv = tape.constant(target);
        let loss = bce(&mut tape, y, tv)?;
        Ok(tape.scalar(loss))
    };
    let nudge = |model: &mut Model, pi: usize, j: usize, delta: f64| {
        let mut k = 0;
        model.visit_params(&mut |_, t| {
            if k == pi {
                t.data[j] += delta;
            }
            k += 1;
        });
    };

    let mut worst = 0.0f64;
    for (pi, grads) in analytic.iter().enumerate() {
        for (j, &exact) in grads.iter().enumerate() {
            nudge(model, pi, j, h);
            let fp = eval(model)?;
            nudge(model, pi, j, -2.0 * h);
            let fm = eval(model)?;
            nudge(model, pi, j, h);
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(rel_err(exact, numeric));
        }
    }
    Ok(worst)
}

mod suite_impl;
pub use suite_impl::suite;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn rand(shape: &[usize], rng: &mut impl rand::Rng) -> Tensor {
        Tensor::rand_uniform(shape, -1.0, 1.0, rng)
    }

    #[test]
    fn accepts_a_correct_gradient() {
        let mut rng = stream(11, &[]);
        let x = rand(&[3, 4], &mut rng);
        let err = grad_check(
            &|tape, vars| {
                let sq = tape.mul(vars[0], vars[0])?;
                Ok(tape.sum(sq))
            },
            &[x],
            DEFAULT_H,
        )
        .unwrap();
        assert!(err < GRAD_TOL, "rel err {err}");
    }

    #[test]
    fn flags_a_wrong_gradient() {
        // sum(2x) computed forward, but the backward of MulScalar uses the
        // recorded constant; lying about the constant must be caught, so
        // emulate a broken gradient by comparing sum(x) analytic against a
        // numeric derivative of sum(2x).
        let mut rng = stream(12, &[]);
        let x = rand(&[5], &mut rng);
        // f reports sum(x) on the tape but perturbations see sum(2x) via the
        // scalar path, so analytic = 1 while numeric = 2.
        let calls = std::cell::Cell::new(0usize);
        let err = grad_check(
            &|tape, vars| {
                let n = calls.get();
                calls.set(n + 1);
                let scaled = if n == 0 {
                    vars[0]
                } else {
                    tape.mul_scalar(vars[0], 2.0)
                };
                Ok(tape.sum(scaled))
            },
            &[x],
            DEFAULT_H,
        )
        .unwrap();
        assert!(
            err > 0.3,
            "inconsistent function must show a large error, got {err}"
        );
    }

    #[test]
    fn rejects_non_scalar_outputs() {
        let x = Tensor::ones(&[2, 2]);
        let res = grad_check(&|tape, vars| tape.add(vars[0], vars[0]), &[x], DEFAULT_H);
        assert!(matches!(res, Err(Error::Shape(_))));
    }
}
