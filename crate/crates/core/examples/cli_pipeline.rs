//! The `akd` subcommands driven in-process against a scratch run directory.
//!
//! ```text
//! cargo run --release --example cli_pipeline -- [run_dir]
//! ```

use std::path::PathBuf;

use adaptive_kd::cli::{execute, Command, Invocation};

fn main() -> adaptive_kd::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("akd-run"));
    let config = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/blobs.toml");
    for command in [
        Command::GenData,
        Command::TrainTeacher,
        Command::CacheTeacher,
        Command::Distill,
        Command::AlphaCurves,
        Command::Report,
    ] {
        let inv = Invocation {
            command,
            config: Some(config.clone()),
            out: out.clone(),
            jobs: 1,
            seed_set: None,
        };
        let outcome = execute(&inv)?;
        println!("== {}\n{}", command.name(), outcome.summary.trim_end());
    }
    Ok(())
}
