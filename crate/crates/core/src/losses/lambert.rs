//! Principal branch of the Lambert W function on the reals.

use std::f64::consts::E;

use crate::error::{Error, Result};

const INV_E: f64 = 1.0 / E;
const DOMAIN_SLACK: f64 = 1e-12;
const MAX_ITERATIONS: usize = 64;

/// Solves `w·eʷ = x` for `w ≥ −1`.
///
/// Initial guess by region:
/// - near the branch point `x < −0.25`: the series
///   `−1 + p − p²/3 + 11p³/72` with `p = √(2(e·x + 1))`;
/// - `x ≤ e`: `ln(1 + x)`;
/// - otherwise: `ln x − ln ln x`.
///
/// The guess is refined with Halley's iteration until the step falls below
/// a few ulps of `w`.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if x.is_nan() || x < -INV_E - DOMAIN_SLACK {
        return Err(Error::invalid(format!(
            "lambert_w0 is undefined below -1/e, got {x}"
        )));
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    if x <= -INV_E {
        return Ok(-1.0);
    }
    if x == 0.0 {
        return Ok(0.0);
    }

    let mut w = if x < -0.25 {
        let p = (2.0 * (E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x <= E {
        x.ln_1p()
    } else {
        let l = x.ln();
        l - l.ln()
    };

    for _ in 0..MAX_ITERATIONS {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1 == 0.0 || f == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        if !step.is_finite() {
            break;
        }
        w = (w - step).max(-1.0);
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w)
}
