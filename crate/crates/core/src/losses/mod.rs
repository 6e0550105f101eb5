//! Per-instance losses over logit vectors, each returned together with its
//! gradient with respect to the student logits.
//!
//! Everything here is a pure function of its inputs. Probabilities are always
//! computed with max-subtraction before exponentiation; this changes the low
//! bits of results compared to a naive softmax, so reference values in tests
//! are pinned against this form.

mod baselines;
mod lambert;

pub use baselines::{annealing_target, focal_loss, regression_loss, super_loss, SuperLoss};
pub use lambert::lambert_w0;

use crate::error::{Error, Result};

/// A scalar loss in nats and its gradient with respect to the logits it was
/// computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

pub(crate) fn check_logits(logits: &[f64], what: &str) -> Result<()> {
    if logits.len() < 2 {
        return Err(Error::invalid(format!(
            "{what} must have at least 2 entries, got {}",
            logits.len()
        )));
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what}[{i}] is not finite")));
    }
    Ok(())
}

fn check_label(logits: &[f64], label: usize) -> Result<()> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(())
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    Ok(())
}

/// Log-probabilities `z/τ − logsumexp(z/τ)`, stabilized by the maximum.
pub(crate) fn log_softmax_unchecked(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|v| (v - max) / temperature).collect();
    let log_norm = shifted.iter().map(|v| v.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|v| v - log_norm).collect()
}

pub(crate) fn softmax_unchecked(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .map(|v| ((v - max) / temperature).exp())
        .collect();
    let norm: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= norm);
    out
}

/// Temperature-softened class probabilities.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_logits(logits, "logits")?;
    check_temperature(temperature)?;
    Ok(softmax_unchecked(logits, temperature))
}

/// Task loss `−log p[label]` at unit temperature; gradient `p − onehot(label)`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<LossGrad> {
    check_logits(logits, "logits")?;
    check_label(logits, label)?;
    let log_p = log_softmax_unchecked(logits, 1.0);
    let mut grad: Vec<f64> = log_p.iter().map(|lp| lp.exp()).collect();
    grad[label] -= 1.0;
    Ok(LossGrad {
        // 0 − x rather than −x keeps a perfect prediction at +0.0
        value: 0.0 - log_p[label],
        grad,
    })
}

/// Distillation loss `τ² · KL(softmax(teacher/τ) ‖ softmax(student/τ))`.
///
/// The τ² factor keeps gradient magnitudes comparable across temperatures:
/// the gradient with respect to the student logits is `τ · (p_s − p_t)`.
pub fn kl_distill(student_logits: &[f64], teacher_logits: &[f64], tau: f64) -> Result<LossGrad> {
    check_logits(student_logits, "student logits")?;
    check_logits(teacher_logits, "teacher logits")?;
    if student_logits.len() != teacher_logits.len() {
        return Err(Error::invalid(format!(
            "student has {} logits, teacher has {}",
            student_logits.len(),
            teacher_logits.len()
        )));
    }
    check_temperature(tau)?;

    let log_ps = log_softmax_unchecked(student_logits, tau);
    let log_pt = log_softmax_unchecked(teacher_logits, tau);
    let mut kl = 0.0;
    let mut grad = Vec::with_capacity(log_ps.len());
    for (ls, lt) in log_ps.iter().zip(&log_pt) {
        let pt = lt.exp();
        // 0 · log 0 = 0
        if pt > 0.0 {
            kl += pt * (lt - ls);
        }
        grad.push(tau * (ls.exp() - pt));
    }
    // Rounding can push a true zero slightly negative.
    Ok(LossGrad {
        value: tau * tau * kl.max(0.0),
        grad,
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// `(1 − α)·l_ts + α·l_kd`. The endpoints return the selected loss exactly.
pub fn combined_loss(l_ts: f64, l_kd: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(blend(l_ts, l_kd, alpha))
}

/// Gradient counterpart of [`combined_loss`], elementwise.
pub fn combined_gradient(g_ts: &[f64], g_kd: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if g_ts.len() != g_kd.len() {
        return Err(Error::invalid("gradient lengths differ"));
    }
    Ok(g_ts
        .iter()
        .zip(g_kd)
        .map(|(a, b)| blend(*a, *b, alpha))
        .collect())
}

#[inline]
fn blend(a: f64, b: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        a
    } else if alpha == 1.0 {
        b
    } else {
        (1.0 - alpha) * a + alpha * b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_uniform_and_reference() {
        let p = softmax(&[0.0, 0.0, 0.0], 1.0).unwrap();
        assert!(p.iter().all(|v| close(*v, 1.0 / 3.0, 1e-15)));

        // mpmath, 40 digits
        let expected = [
            0.665_240_955_774_821_9,
            0.244_728_471_054_797_65,
            0.090_030_573_170_380_46,
        ];
        let p = softmax(&[2.0, 1.0, 0.0], 1.0).unwrap();
        for (a, b) in p.iter().zip(expected) {
            assert!(close(*a, b, 1e-15), "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_high_temperature_flattens() {
        let p = softmax(&[3.0, -4.0], 1e6).unwrap();
        assert!(close(p[0], 0.5, 1e-5) && close(p[1], 0.5, 1e-5));
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        assert!(softmax(&[1.0, 2.0], 0.0).is_err());
        assert!(softmax(&[1.0, 2.0], -1.0).is_err());
        assert!(softmax(&[1.0], 1.0).is_err());
        assert!(softmax(&[1.0, f64::NAN], 1.0).is_err());
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0, 999.0], 1.0).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(close(p.iter().sum::<f64>(), 1.0, 1e-12));
    }

    #[test]
    fn cross_entropy_cases() {
        let ce = cross_entropy(&[0.0, 0.0], 0).unwrap();
        assert!(close(ce.value, std::f64::consts::LN_2, 1e-15));
        assert_eq!(ce.grad, vec![-0.5, 0.5]);

        let ce = cross_entropy(&[50.0, -50.0], 0).unwrap();
        assert!(ce.value < 1e-40);

        assert!(matches!(
            cross_entropy(&[0.0, 0.0], 2),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn kl_cases() {
        let s = [0.3, -1.2, 2.5];
        for tau in [0.5, 1.0, 2.0, 7.0] {
            assert_eq!(kl_distill(&s, &s, tau).unwrap().value, 0.0);
        }

        // τ = 1 is the plain KL of the softmaxed vectors.
        let t = [1.0, 0.0, -1.0];
        let pt = softmax(&t, 1.0).unwrap();
        let ps = softmax(&s, 1.0).unwrap();
        let plain: f64 = pt.iter().zip(&ps).map(|(a, b)| a * (a / b).ln()).sum();
        assert!(close(kl_distill(&s, &t, 1.0).unwrap().value, plain, 1e-14));

        // mpmath: 4 · KL(softmax([1,0]) ‖ softmax([0,1]))
        let v = kl_distill(&[0.0, 2.0], &[2.0, 0.0], 2.0).unwrap().value;
        assert!(close(v, 1.848_468_629_040_039, 1e-14), "{v}");

        assert!(kl_distill(&[0.0, 1.0], &[0.0, 1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn combined_endpoints_are_exact() {
        assert_eq!(combined_loss(2.0, 4.0, 0.0).unwrap(), 2.0);
        assert_eq!(combined_loss(2.0, 4.0, 1.0).unwrap(), 4.0);
        assert_eq!(combined_loss(2.0, 4.0, 0.5).unwrap(), 3.0);
        assert!(combined_loss(2.0, 4.0, 1.5).is_err());
        assert!(combined_loss(2.0, 4.0, -0.1).is_err());

        let g = combined_gradient(&[1.0, -2.0], &[3.0, 5.0], 0.25).unwrap();
        assert_eq!(g, vec![0.75 * 1.0 + 0.25 * 3.0, 0.75 * -2.0 + 0.25 * 5.0]);
        let g0 = combined_gradient(&[-0.0, 1.0], &[-3.0, 2.0], 0.0).unwrap();
        assert_eq!(g0[0].to_bits(), (-0.0f64).to_bits());
    }
}
