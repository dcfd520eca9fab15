//! Adam with bias correction over named parameter moments.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::layers::Params;
use crate::tensor::Tape;

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Optimizer state: first/second moment estimates keyed by parameter name,
/// so slots survive any change in traversal order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub config: AdamConfig,
    t: u64,
    slots: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64, config: AdamConfig) -> Self {
        Adam {
            lr,
            config,
            t: 0,
            slots: HashMap::new(),
        }
    }

    /// Collect each parameter's gradient from `tape` and apply one
    /// bias-corrected update in place.
    pub fn step<P: Params + ?Sized>(&mut self, params: &mut P, tape: &Tape) -> Result<()> {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let lr = self.lr;
        let slots = &mut self.slots;
        let mut failure = None;
        params.visit_params("", &mut |name, p| {
            if failure.is_some() {
                return;
            }
            if let Err(e) = tape.collect_grad(p) {
                failure = Some(e);
                return;
            }
            let g = p.grad.as_ref().expect("collect_grad fills the gradient");
            let (m, v) = slots
                .entry(name)
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p.data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::join;
    use crate::tensor::{Tape, Tensor};

    struct Holder {
        w: Tensor,
    }

    impl Params for Holder {
        fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
            f(join(prefix, "w"), &mut self.w);
        }
    }

    fn grad_step(holder: &mut Holder, opt: &mut Adam, slope: f64) {
        let mut tape = Tape::new();
        let w = tape.leaf(&mut holder.w);
        let s = tape.sum(w);
        let loss = tape.mul_scalar(s, slope);
        tape.backward(loss).unwrap();
        opt.step(holder, &tape).unwrap();
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let mut holder = Holder {
            w: Tensor::from_vec(&[1], vec![1.0]).unwrap().with_grad(),
        };
        let mut opt = Adam::new(0.1, AdamConfig::default());
        grad_step(&mut holder, &mut opt, 0.3);
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let expect = 1.0 - 0.1 * 0.3 / (0.3 + 1e-8);
        assert!((holder.w.data[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_gives_constant_steps() {
        let mut holder = Holder {
            w: Tensor::from_vec(&[1], vec![1.0]).unwrap().with_grad(),
        };
        let mut opt = Adam::new(0.01, AdamConfig::default());
        let delta = 0.01 * 0.5 / (0.5 + 1e-8);
        for k in 1..=4u32 {
            grad_step(&mut holder, &mut opt, 0.5);
            // Bias correction makes m_hat = g and v_hat = g^2 at every t.
            let expect = 1.0 - f64::from(k) * delta;
            assert!(
                (holder.w.data[0] - expect).abs() < 1e-12,
                "step {k}: {} vs {expect}",
                holder.w.data[0]
            );
        }
        assert_eq!(opt.steps_taken(), 4);
    }

    #[test]
    fn moments_are_kept_per_parameter() {
        struct Two {
            a: Tensor,
            b: Tensor,
        }
        impl Params for Two {
            fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
                f(join(prefix, "a"), &mut self.a);
                f(join(prefix, "b"), &mut self.b);
            }
        }
        let mut two = Two {
            a: Tensor::from_vec(&[1], vec![0.0]).unwrap().with_grad(),
            b: Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap().with_grad(),
        };
        let mut opt = Adam::new(0.1, AdamConfig::default());
        let mut tape = Tape::new();
        let a = tape.leaf(&mut two.a);
        let b = tape.leaf(&mut two.b);
        let sa = tape.sum(a);
        let sb = tape.sum(b);
        let sb3 = tape.mul_scalar(sb, -3.0);
        let loss = tape.add(sa, sb3).unwrap();
        tape.backward(loss).unwrap();
        opt.step(&mut two, &tape).unwrap();
        assert!(two.a.data[0] < 0.0, "a moves against +1 gradient");
        assert!(
            two.b.data.iter().all(|v| *v > 0.0),
            "b moves against -3 gradient"
        );
        assert_eq!(opt.slots.len(), 2);
        assert_eq!(opt.slots["b"].0.len(), 2);
    }
}
