//! Threshold modes for the adaptive map compared on the blob benchmark.
//!
//! ```text
//! cargo run --release --example sweep_threshold -- [jobs]
//! ```

use adaptive_kd::adaptive::AdaptiveConfig;
use adaptive_kd::experiment::{default_sweep_modes, sweep_threshold, Benchmark};
use adaptive_kd::trainer::{LossVariant, TrainConfig};

fn main() -> adaptive_kd::Result<()> {
    let jobs = std::env::args().nth(1).and_then(|j| j.parse().ok()).unwrap_or(1);
    let bench = Benchmark::default();
    let p = bench.prepare()?;
    let base = TrainConfig {
        variant: LossVariant::AdaptiveKd(AdaptiveConfig::default()),
        ..bench.student.clone()
    };
    let seeds: Vec<u64> = (0..5).collect();
    let table = sweep_threshold(&base, &p.train, &p.test, &p.cache, None, &default_sweep_modes(), &seeds, jobs)?;
    print!("{}", table.render());
    Ok(())
}
