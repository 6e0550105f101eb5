//! Command implementations behind the `akd` binary.
//!
//! Every command reads one experiment config (TOML, or JSON when the file ends
//! in `.json`), writes its outputs under a run directory, and records a
//! `<command>.manifest.json` with the resolved config and SHA-256 digests of
//! every input and output. `report` re-verifies those digests.
//!
//! Exit codes: 0 success, 2 bad input, 3 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptive::{AdaptiveConfig, TeacherCache, ThresholdMode};
use crate::data::{generate_blobs, load_table, BlobSpec, Dataset, Split, TableSchema};
use crate::error::{Error, Result};
use crate::experiment::{alpha_curves, default_sweep_modes, sweep_threshold};
use crate::models::DenseNet;
use crate::trainer::{build_teacher_cache, distill, train_teacher, LossVariant, RunReport, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_BAD_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_BAD_INPUT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    TrainTeacher,
    CacheTeacher,
    Distill,
    SweepT,
    AlphaCurves,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainTeacher => "train-teacher",
            Command::CacheTeacher => "cache-teacher",
            Command::Distill => "distill",
            Command::SweepT => "sweep-t",
            Command::AlphaCurves => "alpha-curves",
            Command::Report => "report",
        }
    }
}

/// File locations; unset entries default to the conventional names inside
/// the run directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub teacher: Option<PathBuf>,
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub modes: Vec<ThresholdMode>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            modes: default_sweep_modes(),
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurvesConfig {
    pub grid_points: usize,
    /// Falls back to the student's adaptive settings, then to defaults.
    pub adaptive: Option<AdaptiveConfig>,
}

impl Default for CurvesConfig {
    fn default() -> Self {
        Self {
            grid_points: 201,
            adaptive: None,
        }
    }
}

/// One file drives every command; each command reads the sections it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: PathsConfig,
    pub data: Option<BlobSpec>,
    pub teacher: Option<TrainConfig>,
    pub student: Option<TrainConfig>,
    pub sweep: SweepConfig,
    pub curves: CurvesConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str, json: bool) -> Result<Self> {
        if json {
            Ok(serde_json::from_str(text)?)
        } else {
            Ok(toml::from_str(text)?)
        }
    }

    /// Loads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let json = path.extension().is_some_and(|e| e == "json");
        let mut cfg = Self::parse(&text, json)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.paths.train,
            &mut cfg.paths.test,
            &mut cfg.paths.teacher,
            &mut cfg.paths.cache,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn train_path(&self, out: &Path) -> PathBuf {
        self.paths.train.clone().unwrap_or_else(|| out.join("train.csv"))
    }

    fn test_path(&self, out: &Path) -> PathBuf {
        self.paths.test.clone().unwrap_or_else(|| out.join("test.csv"))
    }

    fn teacher_path(&self, out: &Path) -> PathBuf {
        self.paths.teacher.clone().unwrap_or_else(|| out.join("teacher.json"))
    }

    fn cache_path(&self, out: &Path) -> PathBuf {
        self.paths.cache.clone().unwrap_or_else(|| out.join("teacher_cache.jsonl"))
    }

    fn student(&self) -> Result<&TrainConfig> {
        self.student
            .as_ref()
            .ok_or_else(|| Error::invalid("config has no [student] section"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Provenance of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    fn digest_all(paths: &[PathBuf], base: &Path) -> Result<Vec<FileDigest>> {
        let base = base.canonicalize().map_err(|e| Error::io(base, e))?;
        paths
            .iter()
            .map(|p| {
                let abs = p.canonicalize().map_err(|e| Error::io(p, e))?;
                let shown = abs.strip_prefix(&base).map(Path::to_path_buf).unwrap_or(abs.clone());
                Ok(FileDigest {
                    path: shown.to_string_lossy().into_owned(),
                    sha256: sha256_file(&abs)?,
                })
            })
            .collect()
    }

    pub fn create(
        command: Command,
        config: &ExperimentConfig,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        run_dir: &Path,
    ) -> Result<Self> {
        Ok(Self {
            tool: "akd".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.name().to_string(),
            config: serde_json::to_value(config)?,
            inputs: Self::digest_all(inputs, run_dir)?,
            outputs: Self::digest_all(outputs, run_dir)?,
        })
    }

    pub fn file_name(command: Command) -> String {
        format!("{}.manifest.json", command.name())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Recomputes every digest; relative entries resolve against `run_dir`.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        for entry in self.inputs.iter().chain(&self.outputs) {
            let p = Path::new(&entry.path);
            let p = if p.is_relative() { run_dir.join(p) } else { p.to_path_buf() };
            let actual = sha256_file(&p)?;
            if actual != entry.sha256 {
                return Err(Error::DigestMismatch {
                    path: p,
                    expected: entry.sha256.clone(),
                    actual,
                });
            }
        }
        Ok(())
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} not found: {}", path.display())))
    }
}

/// Parses `--seed-set`: a comma list (`1,2,3`) or a half-open range (`0..10`).
pub fn parse_seed_set(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::invalid(format!("bad seed set '{text}'"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b <= a {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    let seeds = text
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect::<Result<Vec<u64>>>()?;
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub jobs: usize,
    pub seed_set: Option<Vec<u64>>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    /// Human-readable summary for stdout.
    pub summary: String,
    pub outputs: Vec<PathBuf>,
}

pub fn execute(inv: &Invocation) -> Result<Outcome> {
    fs::create_dir_all(&inv.out).map_err(|e| Error::io(&inv.out, e))?;
    if inv.command == Command::Report {
        return cmd_report(&inv.out);
    }
    let config_path = inv
        .config
        .as_deref()
        .ok_or_else(|| Error::invalid(format!("{} needs --config", inv.command.name())))?;
    let config = ExperimentConfig::load(config_path)?;
    let out = inv.out.as_path();
    let (inputs, outputs, summary) = match inv.command {
        Command::GenData => cmd_gen_data(&config, out)?,
        Command::TrainTeacher => cmd_train_teacher(&config, out)?,
        Command::CacheTeacher => cmd_cache_teacher(&config, out)?,
        Command::Distill => cmd_distill(&config, out)?,
        Command::SweepT => cmd_sweep_t(&config, out, inv.jobs, inv.seed_set.as_deref())?,
        Command::AlphaCurves => cmd_alpha_curves(&config, out)?,
        Command::Report => unreachable!(),
    };
    let mut all_inputs = vec![config_path.to_path_buf()];
    all_inputs.extend(inputs);
    let manifest = RunManifest::create(inv.command, &config, &all_inputs, &outputs, out)?;
    let manifest_path = out.join(RunManifest::file_name(inv.command));
    manifest.save(&manifest_path)?;
    let mut outputs = outputs;
    outputs.push(manifest_path);
    Ok(Outcome { summary, outputs })
}

type CommandResult = Result<(Vec<PathBuf>, Vec<PathBuf>, String)>;

fn load_split(path: &Path, split: Split, like: Option<&Dataset>, config: &ExperimentConfig) -> Result<Dataset> {
    require(path, "dataset")?;
    let (dim, classes) = match (like, &config.data) {
        (Some(d), _) => (d.dim(), d.num_classes()),
        (None, Some(spec)) => (spec.dim, spec.num_classes),
        (None, None) => infer_shape(path, config)?,
    };
    load_table(path, &TableSchema::canonical(dim, classes, split))
}

/// Feature count from the CSV header; class count from the configured
/// network output layer.
fn infer_shape(path: &Path, config: &ExperimentConfig) -> Result<(usize, usize)> {
    let mut reader = csv::Reader::from_path(path)?;
    let dim = reader.headers()?.iter().filter(|h| h.starts_with('f')).count();
    let classes = config
        .student
        .as_ref()
        .or(config.teacher.as_ref())
        .and_then(|c| c.layer_sizes.last().copied())
        .ok_or_else(|| Error::Schema("cannot infer the class count; add a [data] section".into()))?;
    Ok((dim, classes))
}

fn load_data(config: &ExperimentConfig, out: &Path) -> Result<(Dataset, Dataset, Vec<PathBuf>)> {
    let (train_path, test_path) = (config.train_path(out), config.test_path(out));
    let train = load_split(&train_path, Split::Train, None, config)?;
    let test = load_split(&test_path, Split::Test, Some(&train), config)?;
    Ok((train, test, vec![train_path, test_path]))
}

fn write_report(report: &RunReport, out: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let json = out.join(format!("{stem}.json"));
    let csv = out.join(format!("{stem}_epochs.csv"));
    write_file(&json, &(report.to_json()? + "\n"))?;
    write_file(&csv, &report.to_csv())?;
    Ok(vec![json, csv])
}

pub fn cmd_gen_data(config: &ExperimentConfig, out: &Path) -> CommandResult {
    let spec = config.data.clone().unwrap_or_default();
    let (train, test) = generate_blobs(&spec)?;
    let (train_path, test_path) = (out.join("train.csv"), out.join("test.csv"));
    train.save_csv(&train_path)?;
    test.save_csv(&test_path)?;
    let summary = format!(
        "generated {} train / {} test instances, class counts {:?} / {:?}",
        train.len(),
        test.len(),
        train.class_counts(),
        test.class_counts()
    );
    Ok((vec![], vec![train_path, test_path], summary))
}

pub fn cmd_train_teacher(config: &ExperimentConfig, out: &Path) -> CommandResult {
    let teacher_cfg = config
        .teacher
        .as_ref()
        .ok_or_else(|| Error::invalid("config has no [teacher] section"))?;
    let (train, test, inputs) = load_data(config, out)?;
    let (teacher, report) = train_teacher(teacher_cfg, &train, &test)?;
    let ckpt = out.join("teacher.json");
    teacher.save(&ckpt)?;
    let mut outputs = vec![ckpt];
    outputs.extend(write_report(&report, out, "teacher_report")?);
    let summary = format!("teacher test error {:.4}", report.final_test_error);
    Ok((inputs, outputs, summary))
}

pub fn cmd_cache_teacher(config: &ExperimentConfig, out: &Path) -> CommandResult {
    let teacher_path = config.teacher_path(out);
    require(&teacher_path, "teacher checkpoint")?;
    let teacher = DenseNet::load(&teacher_path)?;
    let train_path = config.train_path(out);
    let train = load_split(&train_path, Split::Train, None, config)?;
    let cache = build_teacher_cache(&teacher, &train)?;
    let cache_path = out.join("teacher_cache.jsonl");
    cache.save(&cache_path)?;
    let s = cache.stats();
    let summary = format!(
        "cached {} teacher losses: mean {:.6}, p25 {:.6}, p50 {:.6}, p75 {:.6}, max {:.6}",
        s.count, s.mean, s.p25, s.p50, s.p75, s.max
    );
    Ok((vec![teacher_path, train_path], vec![cache_path], summary))
}

/// Cache and teacher inputs required by `variant`, loaded when present.
fn load_teacher_inputs(
    config: &ExperimentConfig,
    out: &Path,
    variant: &LossVariant,
) -> Result<(Option<TeacherCache>, Option<DenseNet>, Vec<PathBuf>)> {
    let mut inputs = Vec::new();
    if !variant.needs_teacher() {
        return Ok((None, None, inputs));
    }
    let cache_path = config.cache_path(out);
    let cache = if cache_path.exists() {
        inputs.push(cache_path.clone());
        Some(TeacherCache::load(&cache_path)?)
    } else {
        None
    };
    let teacher = match variant {
        LossVariant::Annealing { .. } => {
            let p = config.teacher_path(out);
            if p.exists() {
                inputs.push(p.clone());
                Some(DenseNet::load(&p)?)
            } else {
                None
            }
        }
        _ => None,
    };
    if cache.is_none() && teacher.is_none() {
        return Err(Error::invalid(format!(
            "{} needs a teacher cache at {}",
            variant.name(),
            cache_path.display()
        )));
    }
    Ok((cache, teacher, inputs))
}

pub fn cmd_distill(config: &ExperimentConfig, out: &Path) -> CommandResult {
    let student_cfg = config.student()?;
    let (train, test, mut inputs) = load_data(config, out)?;
    let (cache, teacher, teacher_inputs) = load_teacher_inputs(config, out, &student_cfg.variant)?;
    inputs.extend(teacher_inputs);
    let (student, report) = distill(student_cfg, &train, &test, cache.as_ref(), teacher.as_ref())?;
    let ckpt = out.join("student.json");
    student.save(&ckpt)?;
    let mut outputs = vec![ckpt];
    outputs.extend(write_report(&report, out, "report")?);
    let summary = format!(
        "{} student test error {:.4} after {} steps",
        report.variant, report.final_test_error, report.steps
    );
    Ok((inputs, outputs, summary))
}

pub fn cmd_sweep_t(config: &ExperimentConfig, out: &Path, jobs: usize, seed_set: Option<&[u64]>) -> CommandResult {
    let student_cfg = config.student()?;
    let (train, test, mut inputs) = load_data(config, out)?;
    let cache_path = config.cache_path(out);
    require(&cache_path, "teacher cache")?;
    let cache = TeacherCache::load(&cache_path)?;
    inputs.push(cache_path);
    let seeds = seed_set.map(<[u64]>::to_vec).unwrap_or_else(|| config.sweep.seeds.clone());
    let table = sweep_threshold(student_cfg, &train, &test, &cache, None, &config.sweep.modes, &seeds, jobs)?;
    let rows = out.join("sweep.csv");
    let summary_path = out.join("sweep_summary.csv");
    write_file(&rows, &table.rows_csv())?;
    write_file(&summary_path, &table.summary_csv())?;
    Ok((inputs, vec![rows, summary_path], table.render()))
}

pub fn cmd_alpha_curves(config: &ExperimentConfig, out: &Path) -> CommandResult {
    let cache_path = config.cache_path(out);
    require(&cache_path, "teacher cache")?;
    let cache = TeacherCache::load(&cache_path)?;
    let adaptive = match (&config.curves.adaptive, config.student.as_ref().map(|s| &s.variant)) {
        (Some(a), _) => a.clone(),
        (None, Some(LossVariant::AdaptiveKd(a))) => a.clone(),
        _ => AdaptiveConfig::default(),
    };
    let params = adaptive.resolve(&cache)?;
    let curves = alpha_curves(&cache, &params, config.curves.grid_points)?;
    let path = out.join("alpha_curves.csv");
    write_file(&path, &curves.to_csv())?;
    let summary = format!(
        "{} curve points; t = {:.6}, k+ = {:.6}, k- = {:.6}",
        curves.points.len(),
        params.t,
        params.k_plus,
        params.k_minus
    );
    Ok((vec![cache_path], vec![path], summary))
}

/// Verifies every manifest in the run directory and summarizes its reports.
pub fn cmd_report(run_dir: &Path) -> Result<Outcome> {
    let mut manifests: Vec<PathBuf> = fs::read_dir(run_dir)
        .map_err(|e| Error::io(run_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    manifests.sort();
    if manifests.is_empty() {
        return Err(Error::invalid(format!("no manifests in {}", run_dir.display())));
    }
    let mut summary = String::new();
    for path in &manifests {
        let manifest = RunManifest::load(path)?;
        manifest.verify(run_dir)?;
        summary.push_str(&format!(
            "{}: {} inputs, {} outputs verified\n",
            manifest.command,
            manifest.inputs.len(),
            manifest.outputs.len()
        ));
    }
    for stem in ["teacher_report", "report"] {
        let p = run_dir.join(format!("{stem}.json"));
        if p.exists() {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let report: RunReport = serde_json::from_str(&text)?;
            summary.push_str(&format!(
                "{stem}: variant {}, {} epochs, final test error {:.4}\n",
                report.variant,
                report.epochs.len(),
                report.final_test_error
            ));
        }
    }
    let sweep = run_dir.join("sweep_summary.csv");
    if sweep.exists() {
        summary.push_str(&fs::read_to_string(&sweep).map_err(|e| Error::io(&sweep, e))?);
    }
    Ok(Outcome {
        summary,
        outputs: manifests,
    })
}
