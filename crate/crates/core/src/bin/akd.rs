use std::path::PathBuf;
use std::process::ExitCode;

use adaptive_kd::cli::{execute, exit_code, parse_seed_set, Command, Invocation};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "akd", version, about = "Adaptive knowledge distillation experiments")]
struct Args {
    #[command(subcommand)]
    command: Cmd,

    /// Experiment config (TOML, or JSON by extension)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run directory for outputs and manifests
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,

    /// Parallel training jobs for sweeps
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Seeds for sweeps, e.g. `0..10` or `1,2,3`
    #[arg(long, global = true)]
    seed_set: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Generate train/test blob datasets
    GenData,
    /// Train the teacher network on cross-entropy
    TrainTeacher,
    /// Freeze per-instance teacher losses and logits
    CacheTeacher,
    /// Train a student under the configured loss variant
    Distill,
    /// Compare threshold modes for adaptive distillation
    SweepT,
    /// Emit alpha-versus-teacher-loss curves
    AlphaCurves,
    /// Verify run manifests and summarize reports
    Report,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = match args.command {
        Cmd::GenData => Command::GenData,
        Cmd::TrainTeacher => Command::TrainTeacher,
        Cmd::CacheTeacher => Command::CacheTeacher,
        Cmd::Distill => Command::Distill,
        Cmd::SweepT => Command::SweepT,
        Cmd::AlphaCurves => Command::AlphaCurves,
        Cmd::Report => Command::Report,
    };
    let seed_set = match args.seed_set.as_deref().map(parse_seed_set).transpose() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("akd: {e}");
            return ExitCode::from(exit_code(&e) as u8);
        }
    };
    let inv = Invocation {
        command,
        config: args.config,
        out: args.out,
        jobs: args.jobs,
        seed_set,
    };
    match execute(&inv) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            if !outcome.summary.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("akd {}: {e}", command.name());
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
