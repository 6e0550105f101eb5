//! One adaptive distillation run with per-epoch k and α statistics.
//!
//! ```text
//! cargo run --release --example adaptive_distill
//! ```

use adaptive_kd::adaptive::AdaptiveConfig;
use adaptive_kd::experiment::Benchmark;
use adaptive_kd::trainer::{distill, LossVariant, TrainConfig};

fn main() -> adaptive_kd::Result<()> {
    let bench = Benchmark::default();
    let p = bench.prepare()?;
    println!("teacher test error {:.4}", p.teacher_test_error);

    let cfg = TrainConfig {
        variant: LossVariant::AdaptiveKd(AdaptiveConfig::default()),
        ..bench.student.clone()
    };
    let (_, report) = distill(&cfg, &p.train, &p.test, Some(&p.cache), None)?;
    let params = report.adaptive.as_ref().expect("adaptive run");
    println!("t = {:.5}  k+ = {:.5}  k- = {:.5}", params.t, params.k_plus, params.k_minus);
    println!("{:>5} {:>9} {:>8} {:>8} {:>9} {:>9}", "epoch", "k", "loss", "err", "α hard", "α easy");
    for e in report.epochs.iter().step_by(20).chain(report.epochs.last()) {
        println!(
            "{:>5} {:>9.5} {:>8.4} {:>8.4} {:>9.5} {:>9.5}",
            e.epoch,
            e.k.unwrap_or(f64::NAN),
            e.train_loss,
            e.test_error,
            e.alpha_hard_mean.unwrap_or(f64::NAN),
            e.alpha_easy_mean.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
