//! Adaptive knowledge distillation: per-instance weighting of task and
//! distillation losses driven by frozen teacher losses, scheduled from
//! easy-first to hard-first over training.
//!
//! The crate is organized bottom-up:
//! - [`losses`]: task, distillation and baseline losses with gradients;
//! - [`adaptive`]: difficulty factor, α weights, threshold and k schedule,
//!   and the frozen [`adaptive::TeacherCache`];
//! - [`models`]: a dense classifier with analytic backpropagation;
//! - [`optim`]: Adam and SGD;
//! - [`data`]: Gaussian blob datasets and CSV ingestion;
//! - [`trainer`]: teacher training, cache construction and distillation runs;
//! - [`experiment`]: variant comparisons and threshold sweeps;
//! - [`cli`]: the command implementations behind the `akd` binary.

pub mod adaptive;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod models;
pub mod optim;
pub mod trainer;

pub use error::{Error, Result};
