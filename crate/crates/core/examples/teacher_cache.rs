//! Trains a teacher, freezes its per-instance losses and prints the
//! statistics the threshold modes draw from.
//!
//! ```text
//! cargo run --release --example teacher_cache
//! ```

use adaptive_kd::adaptive::{threshold_t, TeacherCache, ThresholdMode};
use adaptive_kd::data::{generate_blobs, BlobSpec};
use adaptive_kd::trainer::{build_teacher_cache, train_teacher, LossVariant, TrainConfig};

fn main() -> adaptive_kd::Result<()> {
    let (train, test) = generate_blobs(&BlobSpec::default())?;
    let cfg = TrainConfig {
        layer_sizes: vec![2, 64, 64, 3],
        learning_rate: 1e-3,
        epochs: Some(50),
        variant: LossVariant::Finetune,
        seed: 1,
        ..TrainConfig::default()
    };
    let (teacher, report) = train_teacher(&cfg, &train, &test)?;
    println!("teacher test error {:.4}", report.final_test_error);

    let cache = build_teacher_cache(&teacher, &train)?;
    let s = cache.stats();
    println!("{} losses: min {:.5} mean {:.5} max {:.5}", s.count, s.min, s.mean, s.max);
    for mode in [ThresholdMode::Mean, ThresholdMode::Percentile(25.0), ThresholdMode::Percentile(75.0)] {
        println!("t[{mode}] = {:.5}", threshold_t(&cache, mode)?);
    }

    let path = std::env::temp_dir().join("teacher_cache.jsonl");
    cache.save(&path)?;
    let back = TeacherCache::load(&path)?;
    assert_eq!(back.records(), cache.records());
    println!("cache written to {}", path.display());
    Ok(())
}
