//! Minibatch training of teachers and students.
//!
//! A distillation run freezes the teacher's per-instance losses and logits in a
//! [`TeacherCache`] before the first step. Each optimizer step then draws a
//! minibatch, evaluates every instance's objective under the configured
//! [`LossVariant`], averages the per-instance losses and gradients over the
//! batch, and applies one optimizer update. For the adaptive variant the
//! per-instance weight α comes from the cached teacher loss and the current
//! point on the linear k schedule, which reaches `k₋` exactly on the final step.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptive::{alpha_for_loss, AdaptiveConfig, AdaptiveParams, ScheduleState, TeacherCache, TeacherRecord};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{
    annealing_target, combined_gradient, combined_loss, cross_entropy, focal_loss, kl_distill,
    regression_loss, super_loss,
};
use crate::models::{Activation, DenseNet, GradientSet};
use crate::optim::{Optimizer, OptimizerKind};

/// Epoch budget used when a config names neither epochs nor steps.
pub const DEFAULT_EPOCHS: usize = 200;

const SAMPLER_SALT: u64 = 0x5EED_BA7C_4E5A_3B1D;
const SUPER_LOSS_MOMENTUM: f64 = 0.9;

/// Objective applied to each instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossVariant {
    /// Cross-entropy on the labels only.
    Finetune,
    /// Fixed-weight blend of cross-entropy and distillation.
    NormalKd {
        #[serde(default = "default_normal_alpha")]
        alpha: f64,
    },
    /// Per-instance weights from cached teacher losses.
    AdaptiveKd(AdaptiveConfig),
    Focal {
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    /// Super-loss over cross-entropy. Without `tau_sl` the threshold is an
    /// exponential running mean of batch cross-entropy, starting at `ln C`.
    Super {
        #[serde(default)]
        tau_sl: Option<f64>,
        #[serde(default = "default_lambda")]
        lam: f64,
    },
    /// Regression onto linearly annealed teacher logits for the first
    /// `phase1_frac` of epochs, cross-entropy afterwards.
    Annealing {
        #[serde(default = "default_tau_max")]
        tau_max: f64,
        #[serde(default = "default_phase1_frac")]
        phase1_frac: f64,
    },
}

fn default_normal_alpha() -> f64 {
    0.5
}
fn default_gamma() -> f64 {
    2.0
}
fn default_lambda() -> f64 {
    1.0
}
fn default_tau_max() -> f64 {
    7.0
}
fn default_phase1_frac() -> f64 {
    0.75
}

impl LossVariant {
    pub fn name(&self) -> &'static str {
        match self {
            LossVariant::Finetune => "finetune",
            LossVariant::NormalKd { .. } => "normal_kd",
            LossVariant::AdaptiveKd(_) => "adaptive_kd",
            LossVariant::Focal { .. } => "focal",
            LossVariant::Super { .. } => "super",
            LossVariant::Annealing { .. } => "annealing",
        }
    }

    /// Whether the variant reads teacher outputs.
    pub fn needs_teacher(&self) -> bool {
        matches!(
            self,
            LossVariant::NormalKd { .. } | LossVariant::AdaptiveKd(_) | LossVariant::Annealing { .. }
        )
    }
}

impl Default for LossVariant {
    fn default() -> Self {
        LossVariant::AdaptiveKd(AdaptiveConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Training length in epochs; ignored when `steps` is set.
    pub epochs: Option<usize>,
    /// Training length in optimizer steps.
    pub steps: Option<usize>,
    /// Distillation temperature τ.
    pub temperature: f64,
    pub variant: LossVariant,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layer_sizes: vec![2, 3],
            activation: Activation::Relu,
            batch_size: 16,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::default(),
            epochs: None,
            steps: None,
            temperature: 2.0,
            variant: LossVariant::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        match &self.variant {
            LossVariant::NormalKd { alpha } if !(0.0..=1.0).contains(alpha) => {
                Err(Error::invalid("normal_kd alpha must lie in [0, 1]"))
            }
            LossVariant::Focal { gamma } if gamma.is_nan() || *gamma < 0.0 => Err(Error::invalid("focal gamma must be >= 0")),
            LossVariant::Super { lam, .. } if lam.is_nan() || *lam <= 0.0 => Err(Error::invalid("super-loss lambda must be > 0")),
            LossVariant::Annealing { tau_max, phase1_frac }
                if tau_max.is_nan() || *tau_max <= 0.0 || !(0.0 < *phase1_frac && *phase1_frac <= 1.0) =>
            {
                Err(Error::invalid("annealing needs tau_max > 0 and phase1_frac in (0, 1]"))
            }
            _ => Ok(()),
        }
    }

    /// `ceil(N / batch_size)`.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    /// Total optimizer steps for a training set of `n` instances.
    pub fn total_steps(&self, n: usize) -> usize {
        match self.steps {
            Some(s) => s,
            None => self.epochs.unwrap_or(DEFAULT_EPOCHS) * self.steps_per_epoch(n),
        }
    }
}

/// Deterministic epoch-wise shuffling without replacement.
///
/// Epoch `e` uses a permutation drawn from its own ChaCha stream, so any
/// step's batch is a pure function of `(seed, step)`. The final batch of an
/// epoch is short when the batch size does not divide the dataset.
#[derive(Debug, Clone)]
pub struct MiniBatchSampler {
    len: usize,
    batch_size: usize,
    seed: u64,
    epoch: Option<usize>,
    order: Vec<usize>,
}

impl MiniBatchSampler {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > len {
            return Err(Error::invalid(format!(
                "batch size {batch_size} must lie in [1, {len}]"
            )));
        }
        Ok(Self {
            len,
            batch_size,
            seed,
            epoch: None,
            order: Vec::new(),
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.len.div_ceil(self.batch_size)
    }

    pub fn epoch_of(&self, step: usize) -> usize {
        step / self.steps_per_epoch()
    }

    /// Dataset positions in the batch for `step`.
    pub fn batch(&mut self, step: usize) -> &[usize] {
        let spe = self.steps_per_epoch();
        let epoch = step / spe;
        if self.epoch != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ SAMPLER_SALT);
            rng.set_stream(epoch as u64);
            self.order = (0..self.len).collect();
            self.order.shuffle(&mut rng);
            self.epoch = Some(epoch);
        }
        let start = (step % spe) * self.batch_size;
        let end = (start + self.batch_size).min(self.len);
        &self.order[start..end]
    }
}

/// Instance ids in the minibatch drawn at `step`.
pub fn minibatch_sampler(dataset: &Dataset, batch_size: usize, seed: u64, step: usize) -> Result<Vec<u64>> {
    let mut sampler = MiniBatchSampler::new(dataset.len(), batch_size, seed)?;
    Ok(sampler
        .batch(step)
        .iter()
        .map(|&i| dataset.instances()[i].id)
        .collect())
}

/// Fraction of instances whose arg-max logit is not the label. Ties resolve
/// to the lowest class index.
pub fn evaluate(net: &DenseNet, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut wrong = 0usize;
    for inst in dataset.instances() {
        if predict(&net.forward(&inst.features)?) != inst.label {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / dataset.len() as f64)
}

/// Arg-max with ties broken toward the lowest index.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate().skip(1) {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

/// Per-instance teacher cross-entropy and logits over `dataset`.
pub fn build_teacher_cache(teacher: &DenseNet, dataset: &Dataset) -> Result<TeacherCache> {
    if teacher.output_size() != dataset.num_classes() {
        return Err(Error::invalid(format!(
            "teacher has {} outputs, dataset has {} classes",
            teacher.output_size(),
            dataset.num_classes()
        )));
    }
    let records = dataset
        .instances()
        .iter()
        .map(|inst| {
            let logits = teacher.forward(&inst.features)?;
            let loss = cross_entropy(&logits, inst.label)?.value;
            Ok(TeacherRecord {
                id: inst.id,
                loss,
                logits,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TeacherCache::new(records)
}

/// Resolved per-step objective.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    Finetune,
    Blend {
        alpha: f64,
        tau: f64,
    },
    Adaptive {
        params: &'a AdaptiveParams,
        k: f64,
        tau: f64,
    },
    Focal {
        gamma: f64,
    },
    Super {
        tau_sl: f64,
        lam: f64,
    },
    AnnealingRegression {
        epoch: usize,
        phase1_epochs: usize,
        tau_max: f64,
    },
}

/// One instance's contribution to a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTerm {
    pub id: u64,
    pub loss: f64,
    /// Cross-entropy on the label, whatever the objective.
    pub task_loss: f64,
    pub alpha: Option<f64>,
    pub teacher_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// Mean of the per-instance losses.
    pub loss: f64,
    pub terms: Vec<InstanceTerm>,
    /// Gradient of `loss` with respect to the student parameters.
    pub grads: GradientSet,
}

/// Source of teacher logits for the distillation terms.
#[derive(Debug, Clone, Copy)]
pub struct TeacherView<'a> {
    pub cache: Option<&'a TeacherCache>,
    pub live: Option<&'a DenseNet>,
}

impl<'a> TeacherView<'a> {
    fn record(&self, id: u64) -> Result<&'a TeacherRecord> {
        self.cache
            .ok_or_else(|| Error::invalid("this loss variant requires a teacher cache"))?
            .get(id)
            .ok_or_else(|| Error::invalid(format!("teacher cache has no record for instance {id}")))
    }

    fn logits(&self, id: u64, features: &[f64]) -> Result<Vec<f64>> {
        match self.live {
            Some(net) => net.forward(features),
            None => Ok(self.record(id)?.logits.clone()),
        }
    }
}

/// Mean objective and gradient over the instances at `positions` in `train`.
pub fn batch_objective(
    student: &DenseNet,
    train: &Dataset,
    positions: &[usize],
    objective: Objective<'_>,
    teacher: TeacherView<'_>,
) -> Result<BatchOutcome> {
    if positions.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let scale = 1.0 / positions.len() as f64;
    let mut grads = GradientSet::zeros_like(student);
    let mut terms = Vec::with_capacity(positions.len());
    let mut total = 0.0;
    for &pos in positions {
        let inst = &train.instances()[pos];
        let logits = student.forward(&inst.features)?;
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite { step: 0 });
        }
        let ce = cross_entropy(&logits, inst.label)?;
        let mut alpha = None;
        let mut teacher_loss = None;
        let (loss, grad) = match objective {
            Objective::Finetune => (ce.value, ce.grad),
            Objective::Blend { alpha: a, tau } => {
                let kd = kl_distill(&logits, &teacher.record(inst.id)?.logits, tau)?;
                alpha = Some(a);
                blend_terms(&ce.grad, &kd.grad, ce.value, kd.value, a)?
            }
            Objective::Adaptive { params, k, tau } => {
                let record = teacher.record(inst.id)?;
                let a = alpha_for_loss(record.loss, k, params.t)?;
                let kd = kl_distill(&logits, &record.logits, tau)?;
                alpha = Some(a);
                teacher_loss = Some(record.loss);
                blend_terms(&ce.grad, &kd.grad, ce.value, kd.value, a)?
            }
            Objective::Focal { gamma } => {
                let f = focal_loss(&logits, inst.label, gamma)?;
                (f.value, f.grad)
            }
            Objective::Super { tau_sl, lam } => {
                let s = super_loss(ce.value, tau_sl, lam)?;
                (s.value, ce.grad.iter().map(|g| s.sigma * g).collect())
            }
            Objective::AnnealingRegression {
                epoch,
                phase1_epochs,
                tau_max,
            } => {
                let target = annealing_target(
                    &teacher.logits(inst.id, &inst.features)?,
                    epoch,
                    phase1_epochs,
                    tau_max,
                )?;
                let r = regression_loss(&logits, &target)?;
                (r.value, r.grad)
            }
        };
        let upstream: Vec<f64> = grad.iter().map(|g| g * scale).collect();
        student.backward_into(&inst.features, &upstream, &mut grads)?;
        total += loss;
        terms.push(InstanceTerm {
            id: inst.id,
            loss,
            task_loss: ce.value,
            alpha,
            teacher_loss,
        });
    }
    Ok(BatchOutcome {
        loss: total * scale,
        terms,
        grads,
    })
}

fn blend_terms(g_ts: &[f64], g_kd: &[f64], l_ts: f64, l_kd: f64, alpha: f64) -> Result<(f64, Vec<f64>)> {
    let grad = combined_gradient(g_ts, g_kd, alpha)?;
    if cfg!(debug_assertions) && alpha > 0.0 && alpha < 1.0 {
        for ((g, a), b) in grad.iter().zip(g_ts).zip(g_kd) {
            let expected = (1.0 - alpha) * a + alpha * b;
            debug_assert!((g - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }
    Ok((combined_loss(l_ts, l_kd, alpha)?, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-instance objective over the epoch.
    pub train_loss: f64,
    pub test_error: f64,
    /// Scheduled k at this epoch's position in the run: `k₊` for the first
    /// epoch, `k₋` for the last, linear in between.
    pub k: Option<f64>,
    pub alpha_mean: Option<f64>,
    pub alpha_min: Option<f64>,
    pub alpha_max: Option<f64>,
    /// Mean α over instances whose teacher loss exceeds t.
    pub alpha_hard_mean: Option<f64>,
    /// Mean α over instances whose teacher loss is below t.
    pub alpha_easy_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: String,
    pub config: TrainConfig,
    pub adaptive: Option<AdaptiveParams>,
    pub train_size: usize,
    pub steps: usize,
    pub steps_per_epoch: usize,
    pub epochs: Vec<EpochRecord>,
    pub final_train_loss: Option<f64>,
    pub final_test_error: f64,
    pub wall_clock_secs: f64,
    pub notes: Vec<String>,
}

pub const CSV_HEADER: &str = "epoch,train_loss,test_error,k,alpha_mean,alpha_min,alpha_max";

impl RunReport {
    /// Flat per-epoch table; absent values are empty cells.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.epoch,
                e.train_loss,
                e.test_error,
                opt(e.k),
                opt(e.alpha_mean),
                opt(e.alpha_min),
                opt(e.alpha_max)
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Default)]
struct EpochAccumulator {
    loss_sum: f64,
    count: usize,
    alphas: Vec<f64>,
    hard: (f64, usize),
    easy: (f64, usize),
}

impl EpochAccumulator {
    fn absorb(&mut self, terms: &[InstanceTerm], t: Option<f64>) {
        for term in terms {
            self.loss_sum += term.loss;
            self.count += 1;
            if let Some(a) = term.alpha {
                self.alphas.push(a);
                if let (Some(x), Some(t)) = (term.teacher_loss, t) {
                    if x > t {
                        self.hard.0 += a;
                        self.hard.1 += 1;
                    } else if x < t {
                        self.easy.0 += a;
                        self.easy.1 += 1;
                    }
                }
            }
        }
    }

    fn finish(self, epoch: usize, test_error: f64, k: Option<f64>, alpha_stats: bool) -> EpochRecord {
        let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
        let with_alpha = alpha_stats && !self.alphas.is_empty();
        EpochRecord {
            epoch,
            train_loss: self.loss_sum / self.count.max(1) as f64,
            test_error,
            k,
            alpha_mean: with_alpha.then(|| self.alphas.iter().sum::<f64>() / self.alphas.len() as f64),
            alpha_min: with_alpha.then(|| self.alphas.iter().copied().fold(f64::INFINITY, f64::min)),
            alpha_max: with_alpha.then(|| self.alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            alpha_hard_mean: if with_alpha { mean(self.hard) } else { None },
            alpha_easy_mean: if with_alpha { mean(self.easy) } else { None },
        }
    }
}

/// Trains a classifier on cross-entropy alone, whatever `config.variant` says.
pub fn train_teacher(config: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<(DenseNet, RunReport)> {
    let config = TrainConfig {
        variant: LossVariant::Finetune,
        ..config.clone()
    };
    run(&config, train, test, TeacherView { cache: None, live: None })
}

/// Trains a student under `config.variant`. KD variants need `cache`;
/// annealing uses `teacher` for live targets when given, the cached logits
/// otherwise.
pub fn distill(
    config: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    cache: Option<&TeacherCache>,
    teacher: Option<&DenseNet>,
) -> Result<(DenseNet, RunReport)> {
    run(config, train, test, TeacherView { cache, live: teacher })
}

fn run(config: &TrainConfig, train: &Dataset, test: &Dataset, teacher: TeacherView<'_>) -> Result<(DenseNet, RunReport)> {
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let started = Instant::now();
    let mut student = DenseNet::init(&config.layer_sizes, config.activation, config.seed)?;
    if student.input_size() != train.dim() || student.output_size() != train.num_classes() {
        return Err(Error::invalid(format!(
            "network {:?} does not fit {} features and {} classes",
            config.layer_sizes,
            train.dim(),
            train.num_classes()
        )));
    }

    let adaptive = match &config.variant {
        LossVariant::AdaptiveKd(cfg) => {
            let cache = teacher
                .cache
                .ok_or_else(|| Error::invalid("adaptive_kd requires a teacher cache"))?;
            Some(cfg.resolve(cache)?)
        }
        _ => None,
    };
    match &config.variant {
        LossVariant::NormalKd { .. } | LossVariant::AdaptiveKd(_) => {
            let cache = teacher
                .cache
                .ok_or_else(|| Error::invalid(format!("{} requires a teacher cache", config.variant.name())))?;
            check_cache_covers(cache, train)?;
        }
        LossVariant::Annealing { .. } => match (teacher.live, teacher.cache) {
            (Some(net), _) if net.input_size() != train.dim() || net.output_size() != train.num_classes() => {
                return Err(Error::invalid("teacher network does not fit the dataset"));
            }
            (Some(_), _) => {}
            (None, Some(cache)) => check_cache_covers(cache, train)?,
            (None, None) => return Err(Error::invalid("annealing requires a teacher network or cache")),
        },
        _ => {}
    }

    let batch_size = config.batch_size.min(train.len());
    let mut sampler = MiniBatchSampler::new(train.len(), batch_size, config.seed)?;
    let spe = sampler.steps_per_epoch();
    let total_steps = config.total_steps(train.len());
    let num_epochs = total_steps.div_ceil(spe);
    let mut optimizer = Optimizer::new(config.optimizer, student.num_params(), config.learning_rate)?;
    let schedule = adaptive
        .as_ref()
        .map(|p| ScheduleState::new(p.k_plus, p.k_minus, total_steps.saturating_sub(1)));
    let phase1_epochs = match config.variant {
        LossVariant::Annealing { phase1_frac, .. } => ((phase1_frac * num_epochs as f64).round() as usize).max(1),
        _ => 0,
    };
    let mut running_tau = (train.num_classes() as f64).ln();

    let mut epochs = Vec::with_capacity(num_epochs);
    let mut acc = EpochAccumulator::default();
    for step in 0..total_steps {
        let epoch = step / spe;
        let k = match &schedule {
            Some(s) => Some(s.k_at(step)?),
            None => None,
        };
        let objective = match (&config.variant, &adaptive) {
            (LossVariant::Finetune, _) => Objective::Finetune,
            (LossVariant::NormalKd { alpha }, _) => Objective::Blend {
                alpha: *alpha,
                tau: config.temperature,
            },
            (LossVariant::AdaptiveKd(_), Some(params)) => Objective::Adaptive {
                params,
                k: k.unwrap(),
                tau: config.temperature,
            },
            (LossVariant::Focal { gamma }, _) => Objective::Focal { gamma: *gamma },
            (LossVariant::Super { tau_sl, lam }, _) => Objective::Super {
                tau_sl: tau_sl.unwrap_or(running_tau),
                lam: *lam,
            },
            (LossVariant::Annealing { tau_max, .. }, _) if epoch < phase1_epochs => Objective::AnnealingRegression {
                epoch,
                phase1_epochs,
                tau_max: *tau_max,
            },
            (LossVariant::Annealing { .. }, _) => Objective::Finetune,
            (LossVariant::AdaptiveKd(_), None) => unreachable!("adaptive params resolved above"),
        };

        let batch = sampler.batch(step).to_vec();
        let outcome = batch_objective(&student, train, &batch, objective, teacher).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFinite { step },
            other => other,
        })?;
        if !outcome.loss.is_finite() || !outcome.grads.is_finite() {
            return Err(Error::NonFinite { step });
        }
        if let LossVariant::Super { tau_sl: None, .. } = config.variant {
            let mean_ce = outcome.terms.iter().map(|t| t.task_loss).sum::<f64>() / outcome.terms.len() as f64;
            running_tau = SUPER_LOSS_MOMENTUM * running_tau + (1.0 - SUPER_LOSS_MOMENTUM) * mean_ce;
        }
        optimizer.step(student.params_mut(), outcome.grads.as_slice());
        acc.absorb(&outcome.terms, adaptive.map(|p| p.t));

        if (step + 1) % spe == 0 || step + 1 == total_steps {
            let epoch_k = adaptive.map(|p| {
                if num_epochs <= 1 {
                    p.k_plus
                } else {
                    crate::adaptive::k_schedule(epoch, num_epochs - 1, p.k_plus, p.k_minus).unwrap_or(p.k_minus)
                }
            });
            let record = std::mem::take(&mut acc).finish(epoch, evaluate(&student, test)?, epoch_k, adaptive.is_some());
            epochs.push(record);
        }
    }

    let mut notes = Vec::new();
    if config.steps.is_none() && config.epochs.is_none() {
        notes.push(format!("training length is the desk-scale default of {DEFAULT_EPOCHS} epochs"));
    }
    let report = RunReport {
        variant: config.variant.name().to_string(),
        config: config.clone(),
        adaptive,
        train_size: train.len(),
        steps: total_steps,
        steps_per_epoch: spe,
        final_train_loss: epochs.last().map(|e| e.train_loss),
        final_test_error: evaluate(&student, test)?,
        epochs,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        notes,
    };
    Ok((student, report))
}

fn check_cache_covers(cache: &TeacherCache, train: &Dataset) -> Result<()> {
    if cache.num_classes() != train.num_classes() {
        return Err(Error::invalid(format!(
            "teacher cache has {} classes, dataset has {}",
            cache.num_classes(),
            train.num_classes()
        )));
    }
    if let Some(inst) = train.instances().iter().find(|i| cache.get(i.id).is_none()) {
        return Err(Error::invalid(format!(
            "teacher cache has no record for instance {}",
            inst.id
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_blobs, BlobSpec, Instance, Split};

    fn tiny() -> (Dataset, Dataset) {
        generate_blobs(&BlobSpec {
            train_per_class: vec![10, 10, 10],
            test_per_class: vec![5, 5, 5],
            ..BlobSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn sampler_covers_each_epoch() {
        let mut s = MiniBatchSampler::new(10, 4, 3).unwrap();
        assert_eq!(s.steps_per_epoch(), 3);
        for epoch in 0..3 {
            let mut seen: Vec<usize> = (0..3).flat_map(|i| s.batch(epoch * 3 + i).to_vec()).collect();
            seen.sort();
            assert_eq!(seen, (0..10).collect::<Vec<_>>());
        }
        assert_eq!(s.batch(2).len(), 2);
        assert!(MiniBatchSampler::new(3, 4, 0).is_err());
        assert!(MiniBatchSampler::new(3, 0, 0).is_err());
    }

    #[test]
    fn predict_breaks_ties_low() {
        assert_eq!(predict(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(predict(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn uniform_logits_error_rate() {
        let zeros = vec![0.0; crate::models::parameter_count(&[2, 3])];
        let net = DenseNet::from_params(&[2, 3], Activation::Relu, zeros).unwrap();
        let instances = (0..9)
            .map(|i| Instance {
                id: i,
                features: vec![i as f64, 1.0],
                label: (i % 3) as usize,
            })
            .collect();
        let ds = Dataset::new(Split::Test, 3, instances).unwrap();
        assert!((evaluate(&net, &ds).unwrap() - 6.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn kd_variants_require_cache() {
        let (train, test) = tiny();
        let cfg = TrainConfig {
            epochs: Some(1),
            variant: LossVariant::NormalKd { alpha: 0.5 },
            ..TrainConfig::default()
        };
        assert!(distill(&cfg, &train, &test, None, None).is_err());
        let cfg = TrainConfig {
            variant: LossVariant::AdaptiveKd(AdaptiveConfig::default()),
            ..cfg
        };
        assert!(distill(&cfg, &train, &test, None, None).is_err());
    }

    #[test]
    fn zero_epochs_leave_init_untouched() {
        let (train, test) = tiny();
        let cfg = TrainConfig {
            layer_sizes: vec![2, 8, 3],
            epochs: Some(0),
            seed: 5,
            ..TrainConfig::default()
        };
        let (net, report) = train_teacher(&cfg, &train, &test).unwrap();
        assert_eq!(net, DenseNet::init(&[2, 8, 3], Activation::Relu, 5).unwrap());
        assert!(report.epochs.is_empty());
    }

    #[test]
    fn variant_config_parsing() {
        let v: LossVariant = serde_json::from_str(r#"{"kind":"focal"}"#).unwrap();
        assert_eq!(v, LossVariant::Focal { gamma: 2.0 });
        let v: LossVariant =
            serde_json::from_str(r#"{"kind":"adaptive_kd","t_mode":"p75","k_minus":-3.0}"#).unwrap();
        match v {
            LossVariant::AdaptiveKd(cfg) => {
                assert_eq!(cfg.k_minus, Some(-3.0));
                assert_eq!(cfg.alpha_min, 0.1);
            }
            other => panic!("{other:?}"),
        }
        let cfg: TrainConfig = toml::from_str("epochs = 3\n[variant]\nkind = \"normal_kd\"\n").unwrap();
        assert_eq!(cfg.variant, LossVariant::NormalKd { alpha: 0.5 });
        assert_eq!(cfg.batch_size, 16);
    }
}
