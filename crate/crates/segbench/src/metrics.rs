//! Pixel-level classification metrics: confusion counts, ROC, AUC.

use crate::error::{Error, Result};

/// Decision rule shared by every consumer: probability >= threshold is a
/// positive call.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub true_pos: u64,
    pub true_neg: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

impl Confusion {
    /// Count calls of `pred >= threshold` against binary ground truth.
    pub fn from_pairs(pred: &[f64], truth: &[f64], threshold: f64) -> Result<Confusion> {
        if pred.len() != truth.len() {
            return Err(Error::shape(format!(
                "confusion: {} predictions vs {} labels",
                pred.len(),
                truth.len()
            )));
        }
        let mut c = Confusion::default();
        for (p, t) in pred.iter().zip(truth) {
            if !p.is_finite() {
                return Err(Error::domain(format!(
                    "confusion: non-finite prediction {p}"
                )));
            }
            let positive = *p >= threshold;
            match (*t == 1.0, positive) {
                (true, true) => c.true_pos += 1,
                (true, false) => c.false_neg += 1,
                (false, true) => c.false_pos += 1,
                (false, false) => c.true_neg += 1,
            }
            if *t != 0.0 && *t != 1.0 {
                return Err(Error::domain(format!("confusion: non-binary label {t}")));
            }
        }
        Ok(c)
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.true_pos += other.true_pos;
        self.true_neg += other.true_neg;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.true_neg + self.false_pos + self.false_neg
    }

    /// Fraction of correct calls; `None` on an empty set.
    pub fn accuracy(&self) -> Option<f64> {
        match self.total() {
            0 => None,
            n => Some((self.true_pos + self.true_neg) as f64 / n as f64),
        }
    }

    /// True-positive rate; `None` when there are no positive labels.
    pub fn sensitivity(&self) -> Option<f64> {
        match self.true_pos + self.false_neg {
            0 => None,
            n => Some(self.true_pos as f64 / n as f64),
        }
    }

    /// True-negative rate; `None` when there are no negative labels.
    pub fn specificity(&self) -> Option<f64> {
        match self.true_neg + self.false_pos {
            0 => None,
            n => Some(self.true_neg as f64 / n as f64),
        }
    }
}

/// Render an optional rate for reports: `n/a` marks an undefined value.
pub fn fmt_rate(rate: Option<f64>) -> String {
    match rate {
        Some(v) => format!("{v:.4}"),
        None => "n/a".to_string(),
    }
}

/// One operating point. The first point is the no-calls corner `(0,0)` at
/// threshold `+inf`; each later point lowers the threshold to one of the
/// distinct scores (ties collapse into a single point).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

fn check_binary_scored(scores: &[f64], labels: &[f64]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "roc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut pos = 0u64;
    let mut neg = 0u64;
    for (s, l) in scores.iter().zip(labels) {
        if !s.is_finite() {
            return Err(Error::domain(format!("roc: non-finite score {s}")));
        }
        match *l {
            1.0 => pos += 1,
            0.0 => neg += 1,
            other => return Err(Error::domain(format!("roc: non-binary label {other}"))),
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    Ok((pos, neg))
}

/// ROC curve by descending score with tied scores grouped.
pub fn roc_curve(scores: &[f64], labels: &[f64]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = check_binary_scored(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .expect("scores are finite")
    });

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let score = scores[order[i]];
        while i < order.len() && scores[order[i]] == score {
            if labels[order[i]] == 1.0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: score,
        });
    }
    Ok(points)
}

/// Area under the ROC curve by trapezoidal integration.
pub fn auc_trapezoid(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// AUC for `scores` against binary `labels` (the default trapezoid route).
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    Ok(auc_trapezoid(&roc_curve(scores, labels)?))
}

/// AUC by the Mann-Whitney statistic with average ranks over ties. Agrees
/// with the trapezoid route analytically; kept as an independent witness.
pub fn auc_mann_whitney(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let (pos, neg) = check_binary_scored(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| {
        scores[*a]
            .partial_cmp(&scores[*b])
            .expect("scores are finite")
    });

    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let score = scores[order[i]];
        let start = i;
        let mut tied_pos = 0u64;
        while i < order.len() && scores[order[i]] == score {
            if labels[order[i]] == 1.0 {
                tied_pos += 1;
            }
            i += 1;
        }
        // Ranks are 1-based; tied entries all take the average rank.
        let avg_rank = (start + 1 + i) as f64 / 2.0;
        rank_sum_pos += avg_rank * tied_pos as f64;
    }
    let u = rank_sum_pos - (pos as f64 * (pos as f64 + 1.0)) / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}
