//! Instance-level baselines: focal loss, super-loss, and the annealed
//! regression targets of two-phase annealing distillation.

use std::f64::consts::E;

use super::{check_label, check_logits, lambert_w0, log_softmax_unchecked, LossGrad};
use crate::error::{Error, Result};

/// `(1 − p)^γ · (−log p)` where `p` is the unit-temperature probability of
/// the label.
pub fn focal_loss(logits: &[f64], label: usize, gamma: f64) -> Result<LossGrad> {
    check_logits(logits, "logits")?;
    check_label(logits, label)?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
    }
    let log_p = log_softmax_unchecked(logits, 1.0);
    let probs: Vec<f64> = log_p.iter().map(|v| v.exp()).collect();
    let p = probs[label];
    let ce = -log_p[label];
    // 1 − p summed from the other classes keeps precision when p ≈ 1.
    let q: f64 = probs
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != label)
        .map(|(_, v)| v)
        .sum::<f64>()
        .min(1.0);
    let modulation = q.powf(gamma);
    let chain = if gamma == 0.0 || q == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * ce * p
    };
    let grad = probs
        .iter()
        .enumerate()
        .map(|(j, pj)| {
            let onehot = if j == label { 1.0 } else { 0.0 };
            modulation * (pj - onehot) - chain * (onehot - pj)
        })
        .collect();
    Ok(LossGrad {
        value: modulation * ce,
        grad,
    })
}

/// Value and optimal confidence of the super-loss for one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuperLoss {
    pub value: f64,
    /// Closed-form optimal confidence σ*. Because σ* minimizes the objective,
    /// it is also `d value / d loss`.
    pub sigma: f64,
}

/// `(ℓ − τ)·σ* + λ·(ln σ*)²` with `σ* = exp(−W₀(½·max(−2/e, (ℓ − τ)/λ)))`.
pub fn super_loss(loss: f64, tau_sl: f64, lam: f64) -> Result<SuperLoss> {
    if !(lam > 0.0 && lam.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive, got {lam}")));
    }
    if !loss.is_finite() || !tau_sl.is_finite() {
        return Err(Error::invalid("super-loss inputs must be finite"));
    }
    let beta = (loss - tau_sl) / lam;
    let w = lambert_w0(0.5 * beta.max(-2.0 / E))?;
    let sigma = (-w).exp();
    Ok(SuperLoss {
        value: (loss - tau_sl) * sigma + lam * w * w,
        sigma,
    })
}

/// Annealed teacher logits for phase one: the teacher logits scaled by
/// `Φ = (epoch + 1) / phase1_epochs`, saturating at 1.
///
/// `tau_max` is validated but does not enter the ramp; the linear schedule
/// coincides with the temperature-annealed form when `tau_max` equals
/// `phase1_epochs`.
pub fn annealing_target(
    teacher_logits: &[f64],
    epoch: usize,
    phase1_epochs: usize,
    tau_max: f64,
) -> Result<Vec<f64>> {
    check_logits(teacher_logits, "teacher logits")?;
    if phase1_epochs == 0 {
        return Err(Error::invalid("phase1_epochs must be at least 1"));
    }
    if !(tau_max > 0.0 && tau_max.is_finite()) {
        return Err(Error::invalid(format!("tau_max must be positive, got {tau_max}")));
    }
    if epoch + 1 >= phase1_epochs {
        return Ok(teacher_logits.to_vec());
    }
    let phi = (epoch + 1) as f64 / phase1_epochs as f64;
    Ok(teacher_logits.iter().map(|v| v * phi).collect())
}

/// Mean squared error between student logits and a regression target.
pub fn regression_loss(student_logits: &[f64], target: &[f64]) -> Result<LossGrad> {
    check_logits(student_logits, "student logits")?;
    if student_logits.len() != target.len() {
        return Err(Error::invalid("target length differs from logits"));
    }
    let n = target.len() as f64;
    let diff: Vec<f64> = student_logits.iter().zip(target).map(|(s, t)| s - t).collect();
    Ok(LossGrad {
        value: diff.iter().map(|d| d * d).sum::<f64>() / n,
        grad: diff.iter().map(|d| 2.0 * d / n).collect(),
    })
}
