//! Six-variant comparison on the blob benchmark, median test error over
//! ten student seeds.
//!
//! ```text
//! cargo run --release --example compare_variants -- [jobs]
//! ```

use adaptive_kd::experiment::Benchmark;

fn main() -> adaptive_kd::Result<()> {
    let jobs = std::env::args().nth(1).and_then(|j| j.parse().ok()).unwrap_or(1);
    let table = Benchmark::default().run(jobs)?;
    print!("{}", table.render());
    for r in &table.results {
        let spread = r.test_errors.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - r.test_errors.iter().cloned().fold(f64::INFINITY, f64::min);
        println!("{:<12} median {:.4}  range {:.4}", r.variant, r.median_test_error, spread);
    }
    Ok(())
}
