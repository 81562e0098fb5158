//! Joint CTC/cross-entropy objective for the character and Pinyin streams,
//! and a central-difference gradient checker.

use serde::Serialize;
use thiserror::Error;

use crate::posterior::log_sum_exp;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("{logits} logit rows but {targets} targets")]
    LengthMismatch { logits: usize, targets: usize },
    #[error("target {id} at position {pos} out of range for vocab size {vocab_size}")]
    TargetOutOfRange { pos: usize, id: u32, vocab_size: usize },
    #[error("no positions to average over")]
    Empty,
    #[error("weight {name} = {value} outside [0, 1]")]
    WeightOutOfRange { name: &'static str, value: f64 },
    #[error("component {name} = {value} is not finite")]
    NonFinite { name: &'static str, value: f64 },
    #[error("loss not finite at parameter {index} perturbed by {delta}")]
    NonFinitePerturbation { index: usize, delta: f64 },
}

/// Default CTC weight inside each stream loss.
pub const DEFAULT_LAMBDA_CTC: f64 = 0.3;
/// Character-stream weight in the total loss.
pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    /// Row-major, same shape as the logits.
    pub grad: Vec<f64>,
}

/// Mean over positions of `-log softmax(logits[i])[targets[i]]`.
pub fn cross_entropy(logits: &[f64], vocab_size: usize, targets: &[u32]) -> Result<CrossEntropy, LossError> {
    if vocab_size == 0 || logits.len() != targets.len() * vocab_size {
        return Err(LossError::LengthMismatch {
            logits: logits.len().checked_div(vocab_size).unwrap_or(0),
            targets: targets.len(),
        });
    }
    if targets.is_empty() {
        return Err(LossError::Empty);
    }
    let positions = targets.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (pos, (&tgt, row)) in targets.iter().zip(logits.chunks(vocab_size)).enumerate() {
        if tgt as usize >= vocab_size {
            return Err(LossError::TargetOutOfRange {
                pos,
                id: tgt,
                vocab_size,
            });
        }
        let lse = log_sum_exp(row.iter().copied());
        loss += lse - row[tgt as usize];
        let g = &mut grad[pos * vocab_size..(pos + 1) * vocab_size];
        for (gv, &x) in g.iter_mut().zip(row) {
            *gv = (x - lse).exp() / positions;
        }
        g[tgt as usize] -= 1.0 / positions;
    }
    Ok(CrossEntropy {
        loss: loss / positions,
        grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l_ctc_char: f64,
    pub l_ce_char: f64,
    pub l_ctc_py: f64,
    pub l_ce_py: f64,
    pub l_char: f64,
    pub l_py: f64,
    pub l_total: f64,
    pub lambda_ctc: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamLosses {
    pub ctc: f64,
    pub ce: f64,
}

/// Mixes CTC and CE inside each stream with `lambda_ctc`, then the two
/// streams with `alpha` (character weight).
pub fn combine(lambda_ctc: f64, alpha: f64, chars: StreamLosses, pinyin: StreamLosses) -> Result<LossBreakdown, LossError> {
    for (name, value) in [("lambda_ctc", lambda_ctc), ("alpha", alpha)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(LossError::WeightOutOfRange { name, value });
        }
    }
    for (name, value) in [
        ("l_ctc_char", chars.ctc),
        ("l_ce_char", chars.ce),
        ("l_ctc_py", pinyin.ctc),
        ("l_ce_py", pinyin.ce),
    ] {
        if !value.is_finite() {
            return Err(LossError::NonFinite { name, value });
        }
    }
    let l_char = lambda_ctc * chars.ctc + (1.0 - lambda_ctc) * chars.ce;
    let l_py = lambda_ctc * pinyin.ctc + (1.0 - lambda_ctc) * pinyin.ce;
    Ok(LossBreakdown {
        l_ctc_char: chars.ctc,
        l_ce_char: chars.ce,
        l_ctc_py: pinyin.ctc,
        l_ce_py: pinyin.ce,
        l_char,
        l_py,
        l_total: alpha * l_char + (1.0 - alpha) * l_py,
        lambda_ctc,
        alpha,
    })
}

/// Largest componentwise relative gap between `loss_fn`'s analytic gradient
/// and central differences at `point`. The denominator is
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(loss_fn: F, point: &[f64], eps: f64) -> Result<f64, LossError>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    assert!(eps > 0.0, "eps must be positive");
    let (_, analytic) = loss_fn(point);
    assert_eq!(analytic.len(), point.len(), "gradient length mismatch");
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let (up, _) = loss_fn(&x);
        x[i] = orig - eps;
        let (down, _) = loss_fn(&x);
        x[i] = orig;
        for (value, delta) in [(up, eps), (down, -eps)] {
            if !value.is_finite() {
                return Err(LossError::NonFinitePerturbation { index: i, delta });
            }
        }
        let numeric = (up - down) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
