//! Multi-run experiments: the variant comparison table, the threshold sweep
//! and α-versus-teacher-loss curves.
//!
//! Independent runs go through a rayon pool bounded by a `jobs` count; every
//! run is a pure function of its inputs, so results do not depend on `jobs`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{alpha_for_loss, threshold_t, AdaptiveConfig, AdaptiveParams, TeacherCache, ThresholdMode};
use crate::data::{generate_blobs, BlobSpec, Dataset};
use crate::error::{Error, Result};
use crate::models::DenseNet;
use crate::trainer::{build_teacher_cache, distill, train_teacher, LossVariant, TrainConfig};

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))
}

/// Median of a non-empty sample; mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// The six training objectives in comparison-table order.
pub fn standard_variants() -> Vec<LossVariant> {
    vec![
        LossVariant::Finetune,
        LossVariant::NormalKd { alpha: 0.5 },
        LossVariant::Super { tau_sl: None, lam: 1.0 },
        LossVariant::Focal { gamma: 2.0 },
        LossVariant::Annealing {
            tau_max: 7.0,
            phase1_frac: 0.75,
        },
        LossVariant::AdaptiveKd(AdaptiveConfig::default()),
    ]
}

fn column_title(variant: &LossVariant) -> &'static str {
    match variant {
        LossVariant::Finetune => "Finetune",
        LossVariant::NormalKd { .. } => "Normal KD",
        LossVariant::Super { .. } => "Super Loss",
        LossVariant::Focal { .. } => "Focal Loss",
        LossVariant::Annealing { .. } => "Annealing KD",
        LossVariant::AdaptiveKd(_) => "Adaptive KD",
    }
}

/// Teacher/student comparison on a blob dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Benchmark {
    pub name: String,
    pub data: BlobSpec,
    pub teacher: TrainConfig,
    /// Student settings shared by every variant; `variant` and `seed` are
    /// overwritten per run.
    pub student: TrainConfig,
    pub variants: Vec<LossVariant>,
    pub seeds: Vec<u64>,
}

impl Default for Benchmark {
    /// Bimodal three-class blobs, a `[2,64,64,3]` teacher and a linear
    /// `[2,3]` student trained for 200 epochs over ten seeds. The teacher uses
    /// a 1e-3 learning rate so that it converges within the same budget.
    fn default() -> Self {
        Self {
            name: "Blobs-3/Dense".to_string(),
            data: BlobSpec::default(),
            teacher: TrainConfig {
                layer_sizes: vec![2, 64, 64, 3],
                learning_rate: 1e-3,
                epochs: Some(200),
                variant: LossVariant::Finetune,
                seed: 1,
                ..TrainConfig::default()
            },
            student: TrainConfig {
                layer_sizes: vec![2, 3],
                epochs: Some(200),
                ..TrainConfig::default()
            },
            variants: standard_variants(),
            seeds: (0..10).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: String,
    pub title: String,
    pub seeds: Vec<u64>,
    pub test_errors: Vec<f64>,
    pub median_test_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub name: String,
    pub teacher_test_error: f64,
    pub results: Vec<VariantResult>,
}

impl ComparisonTable {
    pub fn get(&self, variant: &str) -> Option<&VariantResult> {
        self.results.iter().find(|r| r.variant == variant)
    }

    /// One row per dataset/model, one column per method, median test error
    /// in percent; the best cell is starred.
    pub fn render(&self) -> String {
        let best = self
            .results
            .iter()
            .map(|r| r.median_test_error)
            .fold(f64::INFINITY, f64::min);
        let mut header = format!("{:<22}", "Dataset/Model");
        let mut row = format!("{:<22}", self.name);
        for r in &self.results {
            let _ = write!(header, " | {:>12}", r.title);
            let mark = if r.median_test_error == best { "*" } else { "" };
            let _ = write!(row, " | {:>12}", format!("{mark}{:.2}", 100.0 * r.median_test_error));
        }
        format!(
            "{header}\n{}\n{row}\n(median test error %, teacher {:.2}%)\n",
            "-".repeat(header.len()),
            100.0 * self.teacher_test_error
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,seed,test_error\n");
        for r in &self.results {
            for (s, e) in r.seeds.iter().zip(&r.test_errors) {
                let _ = writeln!(out, "{},{s},{e}", r.variant);
            }
        }
        out
    }
}

/// Everything a comparison needs besides the student settings.
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub teacher: DenseNet,
    pub teacher_test_error: f64,
    pub cache: TeacherCache,
}

impl Benchmark {
    /// Generates the data, trains the teacher and freezes its cache.
    pub fn prepare(&self) -> Result<Prepared> {
        let (train, test) = generate_blobs(&self.data)?;
        let (teacher, report) = train_teacher(&self.teacher, &train, &test)?;
        let cache = build_teacher_cache(&teacher, &train)?;
        Ok(Prepared {
            train,
            test,
            teacher,
            teacher_test_error: report.final_test_error,
            cache,
        })
    }

    pub fn run(&self, jobs: usize) -> Result<ComparisonTable> {
        let prepared = self.prepare()?;
        self.run_prepared(&prepared, jobs)
    }

    pub fn run_prepared(&self, p: &Prepared, jobs: usize) -> Result<ComparisonTable> {
        if self.seeds.is_empty() || self.variants.is_empty() {
            return Err(Error::invalid("a benchmark needs at least one seed and one variant"));
        }
        let tasks: Vec<(usize, u64)> = (0..self.variants.len())
            .flat_map(|v| self.seeds.iter().map(move |&s| (v, s)))
            .collect();
        let errors: Vec<f64> = pool(jobs)?.install(|| {
            tasks
                .par_iter()
                .map(|&(v, seed)| {
                    let cfg = TrainConfig {
                        variant: self.variants[v].clone(),
                        seed,
                        ..self.student.clone()
                    };
                    distill(&cfg, &p.train, &p.test, Some(&p.cache), Some(&p.teacher))
                        .map(|(_, r)| r.final_test_error)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let results = self
            .variants
            .iter()
            .zip(errors.chunks(self.seeds.len()))
            .map(|(variant, errs)| VariantResult {
                variant: variant.name().to_string(),
                title: column_title(variant).to_string(),
                seeds: self.seeds.clone(),
                test_errors: errs.to_vec(),
                median_test_error: median(errs),
            })
            .collect();
        Ok(ComparisonTable {
            name: self.name.clone(),
            teacher_test_error: p.teacher_test_error,
            results,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: ThresholdMode,
    pub t: f64,
    pub seed: u64,
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub mode: ThresholdMode,
    pub t: f64,
    pub median_test_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

impl SweepTable {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("mode,t,seed,test_error\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.mode, r.t, r.seed, r.test_error);
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("mode,t,median_test_error\n");
        for s in &self.summary {
            let _ = writeln!(out, "{},{},{}", s.mode, s.t, s.median_test_error);
        }
        out
    }

    pub fn render(&self) -> String {
        let mut out = format!("{:<8} {:>14} {:>14}\n", "t mode", "t", "median err %");
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{:<8} {:>14.6} {:>14.2}",
                s.mode.to_string(),
                s.t,
                100.0 * s.median_test_error
            );
        }
        out
    }
}

/// The four threshold choices compared in the ablation: mean and quartiles.
pub fn default_sweep_modes() -> Vec<ThresholdMode> {
    vec![
        ThresholdMode::Mean,
        ThresholdMode::Percentile(25.0),
        ThresholdMode::Percentile(50.0),
        ThresholdMode::Percentile(75.0),
    ]
}

/// One adaptive run per `(mode, seed)`. `base` must use the adaptive variant;
/// its threshold mode is replaced per row and any explicit `t` is dropped.
#[allow(clippy::too_many_arguments)]
pub fn sweep_threshold(
    base: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    cache: &TeacherCache,
    teacher: Option<&DenseNet>,
    modes: &[ThresholdMode],
    seeds: &[u64],
    jobs: usize,
) -> Result<SweepTable> {
    let adaptive = match &base.variant {
        LossVariant::AdaptiveKd(cfg) => cfg.clone(),
        other => {
            return Err(Error::invalid(format!(
                "threshold sweep needs an adaptive_kd config, got {}",
                other.name()
            )))
        }
    };
    if modes.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("sweep needs at least one mode and one seed"));
    }
    let ts = modes
        .iter()
        .map(|&m| threshold_t(cache, m))
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, u64)> = (0..modes.len())
        .flat_map(|m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let rows = pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(m, seed)| {
                let cfg = TrainConfig {
                    variant: LossVariant::AdaptiveKd(AdaptiveConfig {
                        t_mode: modes[m],
                        t: None,
                        ..adaptive.clone()
                    }),
                    seed,
                    ..base.clone()
                };
                let (_, report) = distill(&cfg, train, test, Some(cache), teacher)?;
                Ok(SweepRow {
                    mode: modes[m],
                    t: ts[m],
                    seed,
                    test_error: report.final_test_error,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = modes
        .iter()
        .zip(&ts)
        .zip(rows.chunks(seeds.len()))
        .map(|((&mode, &t), chunk)| SweepSummary {
            mode,
            t,
            median_test_error: median(&chunk.iter().map(|r| r.test_error).collect::<Vec<_>>()),
        })
        .collect();
    Ok(SweepTable { rows, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub alpha_k_plus: f64,
    pub alpha_k_zero: f64,
    pub alpha_k_minus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaCurves {
    pub params: AdaptiveParams,
    pub points: Vec<CurvePoint>,
}

impl AlphaCurves {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,alpha_k_plus,alpha_k0,alpha_k_minus\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{}", p.x, p.alpha_k_plus, p.alpha_k_zero, p.alpha_k_minus);
        }
        out
    }
}

/// α against teacher loss at `k₊`, `0` and `k₋`.
///
/// The x grid holds `grid_points` evenly spaced values over the cached loss
/// range, every distinct cached loss, and `t` itself when it falls in range.
pub fn alpha_curves(cache: &TeacherCache, params: &AdaptiveParams, grid_points: usize) -> Result<AlphaCurves> {
    if cache.is_empty() {
        return Err(Error::invalid("alpha curves need a non-empty cache"));
    }
    params.validate()?;
    let (lo, hi) = (cache.stats().min, cache.stats().max);
    let mut xs: Vec<f64> = match grid_points {
        0 => Vec::new(),
        1 => vec![lo],
        n => (0..n)
            .map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
            .collect(),
    };
    xs.extend_from_slice(cache.sorted_losses());
    if params.t >= lo && params.t <= hi {
        xs.push(params.t);
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let points = xs
        .into_iter()
        .map(|x| {
            Ok(CurvePoint {
                x,
                alpha_k_plus: alpha_for_loss(x, params.k_plus, params.t)?,
                alpha_k_zero: alpha_for_loss(x, 0.0, params.t)?,
                alpha_k_minus: alpha_for_loss(x, params.k_minus, params.t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AlphaCurves {
        params: *params,
        points,
    })
}
