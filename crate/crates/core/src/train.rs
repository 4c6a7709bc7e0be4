//! Optimizer, plateau scheduler, standard training and the three-stage
//! transfer-learning procedure (pre-train, freeze, fine-tune).
//!
//! Training runs on a single thread and reduces batch gradients in a fixed
//! order, so every run is bit-reproducible from its config; the `strict` flag
//! is accepted for config compatibility and changes nothing here.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{batch_loss_and_grad, dataset_loss};
use crate::checkpoint::{load_model, save_model};
use crate::data::{build_finetune_dataset, build_pretrain_dataset, ExperimentSequence, SubsequenceDataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::loss::{angular_state_kinds, ComponentKind};
use crate::model::TustinModel;
use crate::nn::{init_net, FeedforwardNet, GradientBundle, DEFAULT_LEAKY_SLOPE};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Seeds network initialization; dataset draws and shuffling derive from it.
    pub seed: u64,
    pub layer_sizes: Vec<usize>,
    pub activation_slope: f64,
    pub n1: usize,
    pub t1: usize,
    pub pretrain_epochs: usize,
    /// Number of leading hidden layers frozen after pre-training.
    pub m_tilde: usize,
    pub n2: usize,
    pub t2: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global-norm gradient clipping threshold; `0` disables clipping.
    pub grad_clip: f64,
    pub patience: usize,
    pub lr_factor: f64,
    pub min_lr: f64,
    pub strict: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            layer_sizes: vec![7, 100, 100, 2],
            activation_slope: DEFAULT_LEAKY_SLOPE,
            n1: 1408,
            t1: 50,
            pretrain_epochs: 300,
            m_tilde: 2,
            n2: 864,
            t2: 75,
            finetune_epochs: 300,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip: 10.0,
            patience: 20,
            lr_factor: 0.5,
            min_lr: 1e-5,
            strict: false,
        }
    }
}

impl TrainingConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.t1 == 0 || self.t2 == 0 {
            return bad("subsequence lengths must be positive".into());
        }
        if !(self.learning_rate >= 0.0) || !(self.min_lr >= 0.0) {
            return bad("learning rates must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment decay rates must lie in [0, 1)".into());
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive".into());
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return bad("lr_factor must lie in (0, 1]".into());
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be non-negative".into());
        }
        if self.layer_sizes.len() < 3 {
            return bad("layer_sizes needs at least three entries".into());
        }
        let hidden = self.layer_sizes.len() - 2;
        if self.m_tilde > hidden {
            return bad(format!("m_tilde = {} exceeds the {hidden} hidden layers", self.m_tilde));
        }
        Ok(())
    }

    /// Datapoints processed by the two transfer-learning stages together.
    pub fn transfer_budget(&self) -> usize {
        self.n1 * self.t1 * self.pretrain_epochs + self.n2 * self.t2 * self.finetune_epochs
    }

    fn adam(&self) -> AdamSettings {
        AdamSettings {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    fn schedule(&self) -> ScheduleState {
        ScheduleState::new(self.patience, self.lr_factor, self.min_lr)
    }
}

/// Fresh model for `n_q` coordinates and `n_u` inputs from the config's layer sizes.
pub fn init_model<T: Scalar>(cfg: &TrainingConfig, n_q: usize, n_u: usize, tau_s: T) -> Result<TustinModel<T>> {
    let net = init_net(&cfg.layer_sizes, cfg.activation_slope, cfg.seed)?;
    TustinModel::new(net, n_q, n_u, tau_s)
}

// ---------------------------------------------------------------------------
// Optimizer

#[derive(Clone, Copy, Debug)]
pub struct AdamSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    m_w: Vec<Matrix<T>>,
    m_b: Vec<Vec<T>>,
    v_w: Vec<Matrix<T>>,
    v_b: Vec<Vec<T>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(net: &FeedforwardNet<T>, settings: AdamSettings) -> Self {
        let zeros = GradientBundle::zeros_like(net);
        Self {
            m_w: zeros.d_weights.clone(),
            m_b: zeros.d_biases.clone(),
            v_w: zeros.d_weights,
            v_b: zeros.d_biases,
            step: 0,
            lr: settings.lr,
            beta1: settings.beta1,
            beta2: settings.beta2,
            epsilon: settings.epsilon,
        }
    }
}

fn adam_update<T: Scalar>(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], c: &AdamCoefficients<T>) {
    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = c.beta1 * *m + (T::one() - c.beta1) * g;
        *v = c.beta2 * *v + (T::one() - c.beta2) * g * g;
        let m_hat = *m / c.bias1;
        let v_hat = *v / c.bias2;
        *p -= c.lr * m_hat / (v_hat.sqrt() + c.epsilon);
    }
}

struct AdamCoefficients<T> {
    lr: T,
    beta1: T,
    beta2: T,
    bias1: T,
    bias2: T,
    epsilon: T,
}

/// One Adam step on every non-frozen parameter group.
pub fn optimizer_step<T: Scalar>(net: &mut FeedforwardNet<T>, grads: &GradientBundle<T>, opt: &mut OptimizerState<T>) -> Result<()> {
    if grads.d_weights.len() != net.weights.len() || grads.d_biases.len() != net.biases.len() {
        return Err(Error::Shape {
            what: "gradient bundle layers",
            expected: net.weights.len(),
            got: grads.d_weights.len(),
        });
    }
    for (g, w) in grads.d_weights.iter().zip(&net.weights) {
        if g.shape() != w.shape() {
            return Err(Error::Shape {
                what: "gradient matrix entries",
                expected: w.rows() * w.cols(),
                got: g.rows() * g.cols(),
            });
        }
    }
    if !grads.is_finite() {
        return Err(Error::TrainingDivergence {
            epoch: 0,
            reason: "non-finite gradient".into(),
        });
    }
    opt.step += 1;
    let t = opt.step as i32;
    let c = AdamCoefficients {
        lr: T::c(opt.lr),
        beta1: T::c(opt.beta1),
        beta2: T::c(opt.beta2),
        bias1: T::c(1.0 - opt.beta1.powi(t)),
        bias2: T::c(1.0 - opt.beta2.powi(t)),
        epsilon: T::c(opt.epsilon),
    };
    let hidden = net.hidden_layers();
    for m in 0..=hidden {
        if net.frozen[m] {
            continue;
        }
        adam_update(
            net.weights[m].as_mut_slice(),
            grads.d_weights[m].as_slice(),
            opt.m_w[m].as_mut_slice(),
            opt.v_w[m].as_mut_slice(),
            &c,
        );
        if m < hidden {
            adam_update(&mut net.biases[m], &grads.d_biases[m], &mut opt.m_b[m], &mut opt.v_b[m], &c);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Scheduler

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub best: f64,
    pub epochs_since_improvement: usize,
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
}

impl ScheduleState {
    pub fn new(patience: usize, factor: f64, min_lr: f64) -> Self {
        Self {
            best: f64::INFINITY,
            epochs_since_improvement: 0,
            patience,
            factor,
            min_lr,
        }
    }
}

/// Updates the plateau state with an epoch loss and returns the new learning rate.
pub fn scheduler_step(sched: &mut ScheduleState, epoch_loss: f64, lr: f64) -> f64 {
    if !sched.best.is_finite() || epoch_loss < sched.best - 1e-8 * sched.best.abs() {
        sched.best = epoch_loss;
        sched.epochs_since_improvement = 0;
        return lr;
    }
    sched.epochs_since_improvement += 1;
    if sched.epochs_since_improvement > sched.patience {
        sched.epochs_since_improvement = 0;
        return (lr * sched.factor).max(sched.min_lr).min(lr);
    }
    lr
}

// ---------------------------------------------------------------------------
// Stages

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub epochs_run: usize,
    pub loss_trace: Vec<f64>,
    pub learning_rates: Vec<f64>,
    /// State loss on the stage dataset with the final weights.
    pub final_loss: f64,
    pub wall_time_s: f64,
    pub seed: u64,
    pub datapoints: usize,
    /// Experiments excluded from the stage dataset.
    pub excluded: Vec<usize>,
}

impl StageReport {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("epoch,loss,learning_rate\n");
        for (i, (l, lr)) in self.loss_trace.iter().zip(&self.learning_rates).enumerate() {
            s.push_str(&format!("{},{l:e},{lr:e}\n", i + 1));
        }
        s
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

struct FitPlan<'a> {
    stage: &'a str,
    epochs: usize,
    /// Batches in the last epoch when the budget ends mid-epoch.
    last_epoch_batches: Option<usize>,
    shuffle_seed: u64,
}

fn fit<T: Scalar>(
    model: &mut TustinModel<T>,
    dataset: &SubsequenceDataset<T>,
    cfg: &TrainingConfig,
    plan: FitPlan<'_>,
) -> Result<StageReport> {
    let started = Instant::now();
    let kinds: Vec<ComponentKind> = angular_state_kinds(model.n_q());
    let samples = &dataset.samples;
    let mut opt = OptimizerState::new(&model.net, cfg.adam());
    let mut sched = cfg.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.shuffle_seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let window = samples.first().map_or(0, |s| s.window_len);
    let mut trace = Vec::with_capacity(plan.epochs);
    let mut rates = Vec::with_capacity(plan.epochs);
    let mut datapoints = 0;

    for epoch in 0..plan.epochs {
        order.shuffle(&mut rng);
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let take = match plan.last_epoch_batches {
            Some(n) if epoch + 1 == plan.epochs => n.min(batches.len()),
            _ => batches.len(),
        };
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for idx in &batches[..take] {
            let refs: Vec<_> = idx.iter().map(|&i| &samples[i]).collect();
            let mut res = batch_loss_and_grad(model, &refs, &kinds, true)?;
            let loss = res.loss_sum.as_f64();
            if !loss.is_finite() {
                return Err(Error::TrainingDivergence {
                    epoch: epoch + 1,
                    reason: "non-finite loss".into(),
                });
            }
            loss_sum += loss;
            seen += res.samples;
            datapoints += res.samples * window;
            res.grads.scale(T::one() / T::c(res.samples as f64));
            if cfg.grad_clip > 0.0 {
                let norm = res.grads.global_norm().as_f64();
                if norm > cfg.grad_clip {
                    res.grads.scale(T::c(cfg.grad_clip / norm));
                }
            }
            optimizer_step(&mut model.net, &res.grads, &mut opt).map_err(|e| match e {
                Error::TrainingDivergence { reason, .. } => Error::TrainingDivergence { epoch: epoch + 1, reason },
                other => other,
            })?;
        }
        let epoch_loss = loss_sum / seen.max(1) as f64;
        trace.push(epoch_loss);
        rates.push(opt.lr);
        opt.lr = scheduler_step(&mut sched, epoch_loss, opt.lr);
        if (epoch + 1) % 25 == 0 || epoch + 1 == plan.epochs {
            info!("{} epoch {}/{}: loss {epoch_loss:.6e}, lr {:.2e}", plan.stage, epoch + 1, plan.epochs, opt.lr);
        }
    }
    let final_loss = dataset_loss(model, samples, &kinds, 256)?.as_f64();
    Ok(StageReport {
        stage: plan.stage.into(),
        epochs_run: plan.epochs,
        loss_trace: trace,
        learning_rates: rates,
        final_loss,
        wall_time_s: started.elapsed().as_secs_f64(),
        seed: cfg.seed,
        datapoints,
        excluded: dataset.excluded.clone(),
    })
}

/// Stream seeds derived from `cfg.seed`, one per purpose.
pub mod purpose {
    pub const PRETRAIN_DATA: u64 = 1;
    pub const FINETUNE_DATA: u64 = 2;
    pub const PRETRAIN_SHUFFLE: u64 = 3;
    pub const FINETUNE_SHUFFLE: u64 = 4;
    pub const STANDARD_DATA: u64 = 5;
    pub const STANDARD_SHUFFLE: u64 = 6;
}

pub fn seed_for(cfg: &TrainingConfig, purpose: u64) -> u64 {
    cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(purpose)
}

/// Trains every group on the pre-training set `D(1)`.
pub fn pretrain<T: Scalar>(
    model: &TustinModel<T>,
    experiments: &[ExperimentSequence<T>],
    cfg: &TrainingConfig,
) -> Result<(TustinModel<T>, StageReport)> {
    cfg.validate()?;
    let dataset = build_pretrain_dataset(experiments, cfg.n1, cfg.t1, seed_for(cfg, purpose::PRETRAIN_DATA))?;
    let mut out = model.clone();
    let report = fit(
        &mut out,
        &dataset,
        cfg,
        FitPlan {
            stage: "pretrain",
            epochs: cfg.pretrain_epochs,
            last_epoch_batches: None,
            shuffle_seed: seed_for(cfg, purpose::PRETRAIN_SHUFFLE),
        },
    )?;
    Ok((out, report))
}

/// Freezes the first `m_tilde` hidden layers; weights are untouched.
pub fn freeze_layers<T: Scalar>(model: &TustinModel<T>, m_tilde: usize) -> Result<TustinModel<T>> {
    let hidden = model.net.hidden_layers();
    if m_tilde > hidden {
        return Err(Error::Config(format!("cannot freeze {m_tilde} of {hidden} hidden layers")));
    }
    let mut out = model.clone();
    let flags = (0..=hidden).map(|m| m < m_tilde).collect();
    out.net.set_frozen(flags)?;
    Ok(out)
}

/// Trains the unfrozen groups on the fine-tuning set `D(2)`.
pub fn finetune<T: Scalar>(
    model: &TustinModel<T>,
    experiments: &[ExperimentSequence<T>],
    cfg: &TrainingConfig,
) -> Result<(TustinModel<T>, StageReport)> {
    cfg.validate()?;
    if !model.net.frozen().iter().any(|&f| f) {
        warn!("fine-tuning with no frozen parameter group");
    }
    let dataset = build_finetune_dataset(experiments, cfg.n2, cfg.t2, seed_for(cfg, purpose::FINETUNE_DATA))?;
    let mut out = model.clone();
    let report = fit(
        &mut out,
        &dataset,
        cfg,
        FitPlan {
            stage: "finetune",
            epochs: cfg.finetune_epochs,
            last_epoch_batches: None,
            shuffle_seed: seed_for(cfg, purpose::FINETUNE_SHUFFLE),
        },
    )?;
    Ok((out, report))
}

/// How many epochs (the last possibly partial) match a datapoint budget.
fn budget_plan(budget: usize, samples: usize, window: usize, batch: usize) -> (usize, Option<usize>) {
    let per_batch = batch.min(samples).max(1) * window;
    let batches_per_epoch = samples.div_ceil(batch.max(1)).max(1);
    let per_epoch = samples * window;
    let full = budget / per_epoch.max(1);
    let rest = budget - full * per_epoch;
    let extra = (rest + per_batch / 2) / per_batch;
    if extra == 0 {
        (full, None)
    } else {
        (full + 1, Some(extra.min(batches_per_epoch)))
    }
}

/// Trains every group on full-range subsequences (like `D(2)`, all groups
/// trainable) for the same number of datapoints as the transfer procedure.
pub fn train_standard<T: Scalar>(
    model: &TustinModel<T>,
    experiments: &[ExperimentSequence<T>],
    cfg: &TrainingConfig,
) -> Result<(TustinModel<T>, StageReport)> {
    cfg.validate()?;
    let dataset = build_finetune_dataset(experiments, cfg.n2, cfg.t2, seed_for(cfg, purpose::STANDARD_DATA))?;
    let (epochs, last) = budget_plan(cfg.transfer_budget(), dataset.samples.len(), cfg.t2, cfg.batch_size);
    let mut out = model.clone();
    let flags = vec![false; out.net.hidden_layers() + 1];
    out.net.set_frozen(flags)?;
    let report = fit(
        &mut out,
        &dataset,
        cfg,
        FitPlan {
            stage: "standard",
            epochs,
            last_epoch_batches: last,
            shuffle_seed: seed_for(cfg, purpose::STANDARD_SHUFFLE),
        },
    )?;
    Ok((out, report))
}

#[derive(Clone, Debug, Default)]
pub struct TransferOptions {
    /// Directory receiving `pretrain.json` and `finetune.json` checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
    /// Skip pre-training when a `pretrain.json` checkpoint already exists.
    pub resume: bool,
}

#[derive(Clone, Debug)]
pub struct TransferReport {
    /// `None` when pre-training was resumed from a checkpoint.
    pub pretrain: Option<StageReport>,
    pub finetune: StageReport,
}

pub const PRETRAIN_CHECKPOINT: &str = "pretrain.json";
pub const FINETUNE_CHECKPOINT: &str = "finetune.json";

/// Bitwise equality of the frozen groups of two networks.
pub fn frozen_groups_identical<T: Scalar>(before: &FeedforwardNet<T>, after: &FeedforwardNet<T>) -> bool {
    let hidden = after.hidden_layers();
    (0..=hidden).filter(|&m| after.frozen()[m]).all(|m| {
        let same_w = before.weights()[m]
            .iter()
            .zip(after.weights()[m].iter())
            .all(|(a, b)| a.to_f64().map(f64::to_bits) == b.to_f64().map(f64::to_bits));
        let same_b = m == hidden
            || before.biases()[m]
                .iter()
                .zip(&after.biases()[m])
                .all(|(a, b)| a.to_f64().map(f64::to_bits) == b.to_f64().map(f64::to_bits));
        same_w && same_b
    })
}

/// Pre-train, freeze the first `m_tilde` hidden layers, fine-tune.
pub fn run_transfer_learning<T: Scalar>(
    model: &TustinModel<T>,
    experiments: &[ExperimentSequence<T>],
    cfg: &TrainingConfig,
    options: &TransferOptions,
) -> Result<(TustinModel<T>, TransferReport)> {
    cfg.validate()?;
    let ckpt = |name: &str| options.checkpoint_dir.as_deref().map(|d| d.join(name));
    let resume_path = ckpt(PRETRAIN_CHECKPOINT).filter(|p| options.resume && p.exists());
    let (pretrained, pre_report) = match resume_path {
        Some(path) => {
            info!("resuming from {}", path.display());
            (load_model(&path).map_err(|e| e.in_stage("pretrain"))?, None)
        }
        None => {
            let (m, r) = pretrain(model, experiments, cfg).map_err(|e| e.in_stage("pretrain"))?;
            if let Some(p) = ckpt(PRETRAIN_CHECKPOINT) {
                save_checkpoint(&m, &p, "pretrain")?;
            }
            (m, Some(r))
        }
    };
    let frozen = freeze_layers(&pretrained, cfg.m_tilde).map_err(|e| e.in_stage("freeze"))?;
    let (tuned, fine_report) = finetune(&frozen, experiments, cfg).map_err(|e| e.in_stage("finetune"))?;
    if !frozen_groups_identical(&frozen.net, &tuned.net) {
        return Err(Error::Numeric("a frozen parameter group changed during fine-tuning".into()).in_stage("finetune"));
    }
    if let Some(p) = ckpt(FINETUNE_CHECKPOINT) {
        save_checkpoint(&tuned, &p, "finetune")?;
    }
    Ok((
        tuned,
        TransferReport {
            pretrain: pre_report,
            finetune: fine_report,
        },
    ))
}

fn save_checkpoint<T: Scalar>(model: &TustinModel<T>, path: &Path, stage: &'static str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_model(model, path, stage).map_err(|e| e.in_stage(stage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_net;

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut net = init_net::<f64>(&[1, 1, 1], 0.01, 0).unwrap();
        let before = net.weights()[1][(0, 0)];
        let mut grads = GradientBundle::zeros_like(&net);
        grads.d_weights[1].as_mut_slice()[0] = 1.0;
        let mut settings = TrainingConfig::default().adam();
        settings.lr = 1e-3;
        let mut opt = OptimizerState::new(&net, settings);
        optimizer_step(&mut net, &grads, &mut opt).unwrap();
        let moved = before - net.weights()[1][(0, 0)];
        assert!((moved - 1e-3).abs() < 1e-10, "{moved}");
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut net = init_net::<f64>(&[3, 4, 2], 0.01, 1).unwrap();
        let before = net.clone();
        let grads = GradientBundle::zeros_like(&net);
        let mut opt = OptimizerState::new(&net, TrainingConfig::default().adam());
        optimizer_step(&mut net, &grads, &mut opt).unwrap();
        assert_eq!(net, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn frozen_groups_never_move() {
        let mut net = init_net::<f64>(&[3, 4, 2], 0.01, 1).unwrap();
        net.set_frozen(vec![true, true]).unwrap();
        let before = net.clone();
        let mut grads = GradientBundle::zeros_like(&net);
        grads.d_weights.iter_mut().for_each(|w| w.iter_mut().for_each(|x| *x = 1.0));
        let mut opt = OptimizerState::new(&net, TrainingConfig::default().adam());
        optimizer_step(&mut net, &grads, &mut opt).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut net = init_net::<f64>(&[3, 4, 2], 0.01, 1).unwrap();
        let mut grads = GradientBundle::zeros_like(&net);
        grads.d_biases[0][0] = f64::NAN;
        let mut opt = OptimizerState::new(&net, TrainingConfig::default().adam());
        assert!(matches!(
            optimizer_step(&mut net, &grads, &mut opt),
            Err(Error::TrainingDivergence { .. })
        ));
    }

    #[test]
    fn plateau_schedule() {
        let mut s = ScheduleState::new(3, 0.5, 1e-5);
        let mut lr = 1e-3;
        for l in [5.0, 4.0, 3.0, 2.0] {
            lr = scheduler_step(&mut s, l, lr);
        }
        assert_eq!(lr, 1e-3);
        for _ in 0..4 {
            lr = scheduler_step(&mut s, 2.0, lr);
        }
        assert_eq!(lr, 5e-4);
        let mut s = ScheduleState::new(0, 0.5, 1e-5);
        s.best = 0.0;
        assert_eq!(scheduler_step(&mut s, 1.0, 1e-5), 1e-5);
    }

    #[test]
    fn freeze_range() {
        let net = init_net::<f64>(&[7, 8, 8, 2], 0.01, 0).unwrap();
        let model = TustinModel::new(net, 2, 1, 0.01).unwrap();
        assert_eq!(freeze_layers(&model, 2).unwrap().net.frozen(), &[true, true, false]);
        assert_eq!(freeze_layers(&model, 0).unwrap().net.frozen(), &[false, false, false]);
        assert!(matches!(freeze_layers(&model, 3), Err(Error::Config(_))));
    }

    #[test]
    fn budget_matches_within_one_batch() {
        let cfg = TrainingConfig::default();
        let (epochs, last) = budget_plan(cfg.transfer_budget(), cfg.n2, cfg.t2, cfg.batch_size);
        let per_epoch = cfg.n2 * cfg.t2;
        let batches = cfg.n2.div_ceil(cfg.batch_size);
        let mut total = (epochs - 1) * per_epoch;
        let n_last = last.unwrap_or(batches);
        // batches are full except possibly the last of an epoch
        total += (0..n_last)
            .map(|b| (cfg.n2 - b * cfg.batch_size).min(cfg.batch_size) * cfg.t2)
            .sum::<usize>();
        let diff = total.abs_diff(cfg.transfer_budget());
        assert!(diff <= cfg.batch_size * cfg.t2, "{total} vs {}", cfg.transfer_budget());
    }

    #[test]
    fn config_toml_round_trip_and_rejects_unknown_keys() {
        let cfg = TrainingConfig {
            seed: 9,
            ..TrainingConfig::default()
        };
        assert_eq!(TrainingConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(TrainingConfig::from_toml("sed = 1").is_err());
        assert!(TrainingConfig::from_toml("m_tilde = 5").is_err());
    }
}
