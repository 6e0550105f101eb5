//! Distillation weight against teacher loss at the start, middle and end of
//! the k schedule.
//!
//! ```text
//! cargo run --example alpha_curves
//! ```

use adaptive_kd::adaptive::{AdaptiveConfig, TeacherCache};
use adaptive_kd::experiment::alpha_curves;

fn main() -> adaptive_kd::Result<()> {
    let losses = [0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.6, 1.2, 2.5, 4.0];
    let cache = TeacherCache::from_losses(&losses)?;
    let params = AdaptiveConfig::default().resolve(&cache)?;
    println!("t = {:.4}  k+ = {:.4}  k- = {:.4}", params.t, params.k_plus, params.k_minus);

    let curves = alpha_curves(&cache, &params, 5)?;
    println!("{:>8} {:>10} {:>10} {:>10}", "x", "k+", "k=0", "k-");
    for p in &curves.points {
        println!("{:>8.4} {:>10.6} {:>10.6} {:>10.6}", p.x, p.alpha_k_plus, p.alpha_k_zero, p.alpha_k_minus);
    }
    Ok(())
}
