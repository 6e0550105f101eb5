//! Instance-level distillation weights derived from frozen teacher losses.
//!
//! Each training instance carries the loss `x` its teacher incurred. With a
//! threshold `t` and a sharpness `k`, the difficulty factor is
//! `d_f = exp(−k·(x − t))` and the distillation weight is
//! `α = exp(−1/√d_f)`. For `k > 0` easy instances (`x < t`) receive the larger
//! weights; `k` decays linearly from `k₊` to `k₋` over training, so when `k₋ < 0`
//! the emphasis moves to hard instances by the end of the run. Every curve
//! passes through `α = e⁻¹` at `x = t`.

mod cache;

pub use cache::{CacheStats, TeacherCache, TeacherRecord};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DF_MIN: f64 = 1e-30;
const DF_MAX: f64 = 1e30;

/// `exp(−k·(x − t))`, clamped to `[1e-30, 1e30]`.
pub fn difficulty_factor(x: f64, k: f64, t: f64) -> f64 {
    let d = (-k * (x - t)).exp();
    if d.is_nan() {
        // only reachable via 0·∞
        return 1.0;
    }
    d.clamp(DF_MIN, DF_MAX)
}

/// `exp(−1/√d_f)`, strictly increasing in `d_f`. Results that would
/// underflow to zero are held at the smallest positive normal `f64`.
pub fn alpha_weight(d_f: f64) -> Result<f64> {
    if d_f.is_nan() || d_f <= 0.0 {
        return Err(Error::invalid(format!(
            "difficulty factor must be positive, got {d_f}"
        )));
    }
    Ok((-1.0 / d_f.sqrt()).exp().max(f64::MIN_POSITIVE))
}

/// α for a single teacher loss.
pub fn alpha_for_loss(x: f64, k: f64, t: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("teacher loss must be finite, got {x}")));
    }
    alpha_weight(difficulty_factor(x, k, t))
}

/// α for every loss in a batch, in input order.
pub fn batch_alphas(teacher_losses: &[f64], k: f64, t: f64) -> Result<Vec<f64>> {
    if teacher_losses.is_empty() {
        return Err(Error::invalid("batch_alphas needs at least one loss"));
    }
    teacher_losses
        .iter()
        .map(|&x| alpha_for_loss(x, k, t))
        .collect()
}

/// How the threshold `t` is chosen from the teacher-loss population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(try_from = "String", into = "String")]
pub enum ThresholdMode {
    #[default]
    Mean,
    /// Percentile in `[0, 100]`, linear interpolation between closest ranks.
    Percentile(f64),
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdMode::Mean => write!(f, "mean"),
            ThresholdMode::Percentile(p) => write!(f, "p{p}"),
        }
    }
}

impl FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("mean") {
            return Ok(ThresholdMode::Mean);
        }
        let digits = s
            .strip_prefix("percentile(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix('p'))
            .ok_or_else(|| Error::invalid(format!("unknown threshold mode '{s}'")))?;
        let p: f64 = digits
            .parse()
            .map_err(|_| Error::invalid(format!("bad percentile in '{s}'")))?;
        if !(0.0..=100.0).contains(&p) {
            return Err(Error::invalid(format!("percentile {p} outside [0, 100]")));
        }
        Ok(ThresholdMode::Percentile(p))
    }
}

impl TryFrom<String> for ThresholdMode {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ThresholdMode> for String {
    fn from(m: ThresholdMode) -> String {
        m.to_string()
    }
}

/// Linear-interpolation percentile of an ascending slice: rank `p/100·(n−1)`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::invalid("percentile of an empty population"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::invalid(format!("percentile {p} outside [0, 100]")));
    }
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Threshold `t` for a cache under the given mode.
pub fn threshold_t(cache: &TeacherCache, mode: ThresholdMode) -> Result<f64> {
    if cache.is_empty() {
        return Err(Error::invalid("threshold of an empty teacher cache"));
    }
    match mode {
        ThresholdMode::Mean => Ok(cache.stats().mean),
        ThresholdMode::Percentile(p) => percentile_sorted(cache.sorted_losses(), p),
    }
}

/// `k₊ = 2·ln(ln(1/α_min)) / (x_max − t)`, the sharpness at which the hardest
/// instance receives exactly `α_min` at the start of training.
pub fn solve_k_plus(x_max: f64, t: f64, alpha_min: f64) -> Result<f64> {
    if !(alpha_min > 0.0 && alpha_min < (-1.0f64).exp()) {
        return Err(Error::invalid(format!(
            "alpha_min must lie in (0, 1/e) for a positive k+, got {alpha_min}"
        )));
    }
    if x_max.is_nan() || t.is_nan() || x_max <= t {
        return Err(Error::DegenerateDistribution(format!(
            "max teacher loss {x_max} does not exceed threshold {t}"
        )));
    }
    Ok(2.0 * (1.0 / alpha_min).ln().ln() / (x_max - t))
}

/// `k₊ + (k₋ − k₊)·step/total`.
pub fn k_schedule(step: usize, total: usize, k_plus: f64, k_minus: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("schedule length must be positive"));
    }
    if step > total {
        return Err(Error::invalid(format!("step {step} beyond schedule end {total}")));
    }
    if step == total {
        return Ok(k_minus);
    }
    Ok(k_plus + (k_minus - k_plus) * (step as f64 / total as f64))
}

/// Position on the linear k schedule, advanced once per optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    step: usize,
    total_steps: usize,
    k_plus: f64,
    k_minus: f64,
    current_k: f64,
}

impl ScheduleState {
    /// A schedule that reaches `k_minus` at step `total_steps`. A zero-length
    /// schedule stays at `k_plus`.
    pub fn new(k_plus: f64, k_minus: f64, total_steps: usize) -> Self {
        Self {
            step: 0,
            total_steps,
            k_plus,
            k_minus,
            current_k: k_plus,
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn current_k(&self) -> f64 {
        self.current_k
    }

    /// k at an arbitrary step without moving the state.
    pub fn k_at(&self, step: usize) -> Result<f64> {
        if self.total_steps == 0 {
            return if step == 0 {
                Ok(self.k_plus)
            } else {
                Err(Error::invalid("zero-length schedule"))
            };
        }
        k_schedule(step, self.total_steps, self.k_plus, self.k_minus)
    }

    pub fn advance(&mut self) -> Result<f64> {
        let next = self.step + 1;
        self.current_k = self.k_at(next)?;
        self.step = next;
        Ok(self.current_k)
    }
}

/// User-facing adaptive settings; unset values are resolved against a cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub t_mode: ThresholdMode,
    /// Explicit threshold; overrides `t_mode` when set.
    pub t: Option<f64>,
    /// Explicit k₊; solved from `alpha_min` when unset.
    pub k_plus: Option<f64>,
    /// Final k; defaults to `−k₊`.
    pub k_minus: Option<f64>,
    pub alpha_min: f64,
    /// Clip the maximum teacher loss to its 99.9th percentile before solving k₊.
    pub winsorize: bool,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            t_mode: ThresholdMode::Mean,
            t: None,
            k_plus: None,
            k_minus: None,
            alpha_min: 0.1,
            winsorize: false,
        }
    }
}

/// Fully resolved adaptive hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveParams {
    pub t: f64,
    pub k_plus: f64,
    pub k_minus: f64,
    pub alpha_min: f64,
    pub t_mode: ThresholdMode,
    /// The loss at which k₊ was anchored, when it was solved.
    pub x_max: Option<f64>,
}

impl AdaptiveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_min > 0.0 && self.alpha_min < 1.0) {
            return Err(Error::invalid(format!(
                "alpha_min must lie in (0, 1), got {}",
                self.alpha_min
            )));
        }
        if !(self.k_plus.is_finite() && self.k_minus.is_finite() && self.t.is_finite()) {
            return Err(Error::invalid("adaptive parameters must be finite"));
        }
        if self.k_plus < self.k_minus {
            return Err(Error::invalid(format!(
                "k+ ({}) must be >= k- ({})",
                self.k_plus, self.k_minus
            )));
        }
        Ok(())
    }
}

impl AdaptiveConfig {
    pub fn resolve(&self, cache: &TeacherCache) -> Result<AdaptiveParams> {
        let t = match self.t {
            Some(t) => t,
            None => threshold_t(cache, self.t_mode)?,
        };
        let (k_plus, x_max) = match self.k_plus {
            Some(k) => (k, None),
            None => {
                let x_max = if self.winsorize {
                    percentile_sorted(cache.sorted_losses(), 99.9)?
                } else {
                    cache.stats().max
                };
                (solve_k_plus(x_max, t, self.alpha_min)?, Some(x_max))
            }
        };
        let params = AdaptiveParams {
            t,
            k_plus,
            k_minus: self.k_minus.unwrap_or(-k_plus),
            alpha_min: self.alpha_min,
            t_mode: self.t_mode,
            x_max,
        };
        params.validate()?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INV_E: f64 = 0.367_879_441_171_442_33;

    #[test]
    fn difficulty_factor_fixed_points() {
        for x in [-3.0, 0.0, 0.4, 17.0] {
            assert_eq!(difficulty_factor(x, 0.0, 1.3), 1.0);
        }
        for k in [-10.0, 0.024, 8.0] {
            assert_eq!(difficulty_factor(0.9, k, 0.9), 1.0);
        }
        // mpmath: e^{-1.668064}
        let d = difficulty_factor(1.5, 1.668064, 0.5);
        assert!((d - 0.188_611_864_969_633_78).abs() < 1e-15);
        assert_eq!(difficulty_factor(1e6, 1e6, 0.0), 1e-30);
        assert_eq!(difficulty_factor(-1e6, 1e6, 0.0), 1e30);
        assert_eq!(difficulty_factor(f64::INFINITY, 0.0, 0.0), 1.0);
    }

    #[test]
    fn alpha_weight_cases() {
        assert_eq!(alpha_weight(1.0).unwrap(), INV_E);
        let ln10 = std::f64::consts::LN_10;
        assert!((alpha_weight(1.0 / (ln10 * ln10)).unwrap() - 0.1).abs() < 1e-15);
        assert!((alpha_weight(1e30).unwrap() - 1.0).abs() < 1e-9);
        assert!(alpha_weight(0.0).is_err());
        assert!(alpha_weight(-1.0).is_err());
    }

    #[test]
    fn percentile_interpolation() {
        assert_eq!(percentile_sorted(&[1.0, 2.0, 3.0], 50.0).unwrap(), 2.0);
        assert_eq!(percentile_sorted(&[1.0, 2.0, 3.0, 4.0], 25.0).unwrap(), 1.75);
        assert_eq!(percentile_sorted(&[5.0], 75.0).unwrap(), 5.0);
        assert!(percentile_sorted(&[], 50.0).is_err());
        assert!(percentile_sorted(&[1.0], 101.0).is_err());
    }

    #[test]
    fn threshold_modes() {
        let cache = TeacherCache::from_losses(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(threshold_t(&cache, ThresholdMode::Mean).unwrap(), 2.0);
        assert_eq!(threshold_t(&cache, ThresholdMode::Percentile(50.0)).unwrap(), 2.0);
        let cache = TeacherCache::from_losses(&[4.0, 3.0, 2.0, 1.0]).unwrap();
        assert_eq!(threshold_t(&cache, ThresholdMode::Percentile(25.0)).unwrap(), 1.75);
    }

    #[test]
    fn threshold_mode_parsing() {
        assert_eq!("mean".parse::<ThresholdMode>().unwrap(), ThresholdMode::Mean);
        assert_eq!("p25".parse::<ThresholdMode>().unwrap(), ThresholdMode::Percentile(25.0));
        assert_eq!(
            "percentile(75)".parse::<ThresholdMode>().unwrap(),
            ThresholdMode::Percentile(75.0)
        );
        assert!("median".parse::<ThresholdMode>().is_err());
        assert!("p150".parse::<ThresholdMode>().is_err());
        let json = serde_json::to_string(&ThresholdMode::Percentile(50.0)).unwrap();
        assert_eq!(json, "\"p50\"");
    }

    #[test]
    fn k_plus_closed_form() {
        // mpmath: 2·ln(ln 10)
        let k = solve_k_plus(1.5, 0.5, 0.1).unwrap();
        assert!((k - 1.668_064_890_495_911_6).abs() < 1e-15);
        let k2 = solve_k_plus(2.5, 0.5, 0.1).unwrap();
        assert!((k2 - 0.834_032_445_247_955_8).abs() < 1e-15);
        let alpha = alpha_for_loss(1.5, k, 0.5).unwrap();
        assert!((alpha - 0.1).abs() < 1e-9);

        assert!(matches!(
            solve_k_plus(0.5, 0.5, 0.1),
            Err(Error::DegenerateDistribution(_))
        ));
        assert!(matches!(
            solve_k_plus(2.0, 0.5, 0.4),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(k_schedule(0, 10, 8.0, -8.0).unwrap(), 8.0);
        assert_eq!(k_schedule(10, 10, 8.0, -8.0).unwrap(), -8.0);
        assert_eq!(k_schedule(5, 10, 15.0, -10.0).unwrap(), 2.5);
        assert!(k_schedule(11, 10, 8.0, -8.0).is_err());
        assert!(k_schedule(0, 0, 8.0, -8.0).is_err());

        let mut s = ScheduleState::new(2.0, -2.0, 4);
        let ks: Vec<f64> = (0..4).map(|_| s.advance().unwrap()).collect();
        assert_eq!(ks, vec![1.0, 0.0, -1.0, -2.0]);
        assert!(s.advance().is_err());
        assert_eq!(ScheduleState::new(3.0, 1.0, 0).k_at(0).unwrap(), 3.0);
    }

    #[test]
    fn batch_alphas_cases() {
        let a = batch_alphas(&[0.7, 0.7, 0.7], 5.0, 0.7).unwrap();
        assert!(a.iter().all(|v| *v == INV_E));
        let a = batch_alphas(&[0.0, 1.0, 9.0], 0.0, 0.7).unwrap();
        assert!(a.iter().all(|v| *v == INV_E));
        assert!(batch_alphas(&[], 1.0, 0.0).is_err());
        assert!(batch_alphas(&[f64::NAN], 1.0, 0.0).is_err());
    }

    #[test]
    fn config_resolution() {
        let cache = TeacherCache::from_losses(&[0.1, 0.2, 0.3, 1.4]).unwrap();
        let p = AdaptiveConfig::default().resolve(&cache).unwrap();
        assert!((p.t - 0.5).abs() < 1e-15);
        assert_eq!(p.k_minus, -p.k_plus);
        assert_eq!(p.x_max, Some(1.4));
        assert!((alpha_for_loss(1.4, p.k_plus, p.t).unwrap() - 0.1).abs() < 1e-9);

        let explicit = AdaptiveConfig {
            k_plus: Some(15.0),
            k_minus: Some(-10.0),
            ..Default::default()
        }
        .resolve(&cache)
        .unwrap();
        assert_eq!((explicit.k_plus, explicit.k_minus, explicit.x_max), (15.0, -10.0, None));

        let inverted = AdaptiveConfig {
            k_plus: Some(-1.0),
            k_minus: Some(1.0),
            ..Default::default()
        };
        assert!(inverted.resolve(&cache).is_err());

        let flat = TeacherCache::from_losses(&[0.3, 0.3]).unwrap();
        assert!(matches!(
            AdaptiveConfig::default().resolve(&flat),
            Err(Error::DegenerateDistribution(_))
        ));
    }
}
