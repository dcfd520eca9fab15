//! Training: binary cross-entropy, Adam, and the epoch loop with
//! best-on-validation checkpointing.

mod adam;
mod fit;

pub use adam::{Adam, AdamConfig};
pub use fit::{eval_loss, train, EpochRecord, TrainConfig, TrainResult};

use crate::error::Result;
use crate::tensor::{Tape, Var, PROB_CLAMP_HI, PROB_CLAMP_LO};

/// Mean binary cross-entropy between per-pixel probabilities and 0/1
/// targets. Predictions are clamped away from {0, 1} so the logs stay
/// finite; inside the clamp range the gradient is exact.
pub fn bce(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let p = tape.clamp(pred, PROB_CLAMP_LO, PROB_CLAMP_HI)?;
    let log_p = tape.log(p)?;
    let neg_p = tape.mul_scalar(p, -1.0);
    let one_minus_p = tape.add_scalar(neg_p, 1.0);
    let log_1p = tape.log(one_minus_p)?;
    let pos = tape.mul(target, log_p)?;
    let neg_t = tape.mul_scalar(target, -1.0);
    let one_minus_t = tape.add_scalar(neg_t, 1.0);
    let neg = tape.mul(one_minus_t, log_1p)?;
    let sum = tape.add(pos, neg)?;
    let mean = tape.mean(sum);
    Ok(tape.mul_scalar(mean, -1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn bce_matches_hand_values() {
        let mut tape = Tape::new();
        let p = tape.constant(&Tensor::from_vec(&[2], vec![0.8, 0.2]).unwrap());
        let t = tape.constant(&Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap());
        let loss = bce(&mut tape, p, t).unwrap();
        // -(log 0.8 + log 0.8) / 2 = -log 0.8
        assert!((tape.scalar(loss) + 0.8f64.ln()).abs() < 1e-12);

        let mut tape = Tape::new();
        let p = tape.constant(&Tensor::from_vec(&[3], vec![0.5, 0.5, 0.5]).unwrap());
        let t = tape.constant(&Tensor::from_vec(&[3], vec![1.0, 0.0, 1.0]).unwrap());
        let loss = bce(&mut tape, p, t).unwrap();
        assert!((tape.scalar(loss) - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_gradient_is_exact_inside_clamp() {
        let mut tape = Tape::new();
        let mut pred = Tensor::from_vec(&[2], vec![0.8, 0.2]).unwrap().with_grad();
        let p = tape.leaf(&mut pred);
        let t = tape.constant(&Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap());
        let loss = bce(&mut tape, p, t).unwrap();
        tape.backward(loss).unwrap();
        tape.collect_grad(&mut pred).unwrap();
        let g = pred.grad.as_ref().unwrap();
        // dL/dp = -(t/p - (1-t)/(1-p)) / n
        assert!((g[0] - (-1.0 / 0.8 / 2.0)).abs() < 1e-12);
        assert!((g[1] - (1.0 / 0.8 / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn bce_is_finite_at_saturated_predictions() {
        let mut tape = Tape::new();
        let p = tape.constant(&Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap());
        let t = tape.constant(&Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap());
        let loss = bce(&mut tape, p, t).unwrap();
        assert!(tape.scalar(loss).is_finite());
    }
}
