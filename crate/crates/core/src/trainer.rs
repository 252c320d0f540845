//! Two-stage training: spin-up on the baseline loss, then abstention
//! training with `kappa`/`tau` frozen from validation sigma percentiles.
//!
//! A run is a pure function of `(data, TrainConfig)`. The abstention
//! protocol is:
//!
//! 1. **Spin-up** — `n_spin` epochs on the Gaussian NLL. At the end, the
//!    percentiles `P_10..P_90` of the predicted validation sigmas are
//!    computed once and frozen: `kappa = P_90` always, and `tau = P_m` for a
//!    coverage setpoint of `m` percent (PID mode) or `tau = kappa`
//!    (constant-alpha mode).
//! 2. **Abstention training** — continues from the spin-up weights using the
//!    abstention loss. `alpha` is either held constant or driven by the PID
//!    controller on windows of training batches. Early stopping monitors the
//!    validation loss of the active stage with the configured patience
//!    (restarted at the stage boundary); in PID mode only epochs whose
//!    validation abstention is within 0.1 of the setpoint are eligible to be
//!    the returned best checkpoint.
//!
//! Baseline runs (`gaussian_nll` on the two-output model, `mae` on the
//! one-output model) are single-stage with the same early stopping.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::controller::{
    constant_alpha_controller, AlphaController, ControlStep, ControllerError, PidConfig,
};
use crate::loss::{self, AbstentionParams, LossError, LossKind};
use crate::net::{Activation, AdamState, LayerSpec, MlpModel, NetError};
use crate::synthdata::Dataset;

/// Chunk size for validation forward passes.
const EVAL_CHUNK: usize = 512;

/// PID gains and bounds, without the setpoint (which the trainer derives
/// from the coverage setpoint percent).
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub window_batches: usize,
    pub alpha_max: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 1.0,
            ki: 0.5,
            kd: 0.0,
            window_batches: 6,
            alpha_max: 10.0,
        }
    }
}

/// How `alpha` evolves during the abstention stage.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AlphaMode {
    Constant { alpha: f64 },
    Pid { gains: PidGains },
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    /// Hidden layer widths; the output layer is appended automatically.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Spin-up epochs (abstention runs only).
    pub n_spin: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss_kind: LossKind,
    pub alpha_mode: AlphaMode,
    /// Coverage setpoint `m` (percent, multiple of 10 in 10..=90); PID mode
    /// only. The abstention setpoint is `1 - m/100` and `tau = P_m`.
    pub coverage_setpoint_percent: Option<u8>,
    pub l2_first_layer: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(TrainError::InvalidConfig {
                reason: String::from("batch_size, max_epochs, and patience must be >= 1"),
            });
        }
        let lr_ok = self.learning_rate.is_finite() && self.learning_rate > 0.0;
        if !lr_ok {
            return Err(TrainError::InvalidConfig {
                reason: String::from("learning_rate must be > 0"),
            });
        }
        if self.l2_first_layer < 0.0 {
            return Err(TrainError::InvalidConfig {
                reason: String::from("l2_first_layer must be >= 0"),
            });
        }
        if self.loss_kind == LossKind::Abstention {
            if self.n_spin == 0 || self.n_spin >= self.max_epochs {
                return Err(TrainError::InvalidConfig {
                    reason: String::from("abstention runs need 1 <= n_spin < max_epochs"),
                });
            }
            match self.alpha_mode {
                AlphaMode::Constant { alpha } => {
                    let alpha_ok = alpha.is_finite() && alpha >= 0.0;
                    if !alpha_ok {
                        return Err(TrainError::InvalidConfig {
                            reason: String::from("constant alpha must be >= 0"),
                        });
                    }
                }
                AlphaMode::Pid { .. } => match self.coverage_setpoint_percent {
                    Some(m) if (10..=90).contains(&m) && m % 10 == 0 => {}
                    _ => {
                        return Err(TrainError::InvalidConfig {
                            reason: String::from(
                                "pid mode needs coverage_setpoint_percent in {10,20,...,90}",
                            ),
                        })
                    }
                },
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Stage {
    Spinup,
    Abstention,
}

/// Tag for per-epoch records; baseline runs are single-stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StageTag {
    Spinup,
    Abstention,
    Baseline,
}

impl StageTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::Spinup => "spinup",
            StageTag::Abstention => "abstention",
            StageTag::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: StageTag,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_abstention: Option<f64>,
    pub alpha: Option<f64>,
}

/// Frozen abstention-stage parameters plus the live controller.
#[derive(Clone, Debug, PartialEq)]
pub struct AbstentionState {
    pub kappa: f64,
    pub tau: f64,
    /// `(m, P_m)` for `m` in 10..=90 step 10, from validation sigma at the
    /// end of spin-up.
    pub percentiles: Vec<(u8, f64)>,
    pub controller: AlphaController,
    pub stage: Stage,
}

/// Summary of the abstention stage kept with the run's results.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AbstentionSummary {
    pub kappa: f64,
    pub tau: f64,
    pub percentiles: Vec<(u8, f64)>,
    pub setpoint: Option<f64>,
    /// `(epoch, step)` for every completed PID window.
    pub control_log: Vec<(usize, ControlStep)>,
}

/// Everything a finished run produces.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub loss_kind: LossKind,
    pub records: Vec<EpochRecord>,
    pub best_model: MlpModel,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub final_model: MlpModel,
    pub abstention: Option<AbstentionSummary>,
    pub stopped_early: bool,
}

#[derive(Debug)]
pub enum TrainError {
    Net(NetError),
    Loss(LossError),
    Controller(ControllerError),
    /// Training produced non-finite validation sigmas.
    Diverged { epoch: usize },
    /// PID mode finished without any epoch inside the eligibility band.
    SetpointUnreachable { setpoint: f64, closest: f64 },
    InvalidConfig { reason: String },
    EmptyDataset,
    FeatureMismatch { expected: usize, got: usize },
    EmptyValues,
    BadPercent { m: f64 },
    NonFiniteValues,
    RunFailed { run: usize, source: Box<TrainError> },
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Net(e) => write!(f, "network error: {e}"),
            TrainError::Loss(e) => write!(f, "loss error: {e}"),
            TrainError::Controller(e) => write!(f, "controller error: {e}"),
            TrainError::Diverged { epoch } => {
                write!(f, "training diverged (non-finite sigma) at epoch {epoch}")
            }
            TrainError::SetpointUnreachable { setpoint, closest } => write!(
                f,
                "no epoch reached the abstention setpoint {setpoint} within 0.1; closest was {closest}"
            ),
            TrainError::InvalidConfig { reason } => write!(f, "invalid config: {reason}"),
            TrainError::EmptyDataset => write!(f, "dataset has no samples"),
            TrainError::FeatureMismatch { expected, got } => {
                write!(f, "train split has {expected} features but val has {got}")
            }
            TrainError::EmptyValues => write!(f, "percentile of an empty list"),
            TrainError::BadPercent { m } => write!(f, "percent must be in (0, 100), got {m}"),
            TrainError::NonFiniteValues => write!(f, "percentile over non-finite values"),
            TrainError::RunFailed { run, source } => write!(f, "ensemble run {run} failed: {source}"),
        }
    }
}

impl core::error::Error for TrainError {}

impl From<NetError> for TrainError {
    fn from(e: NetError) -> Self {
        TrainError::Net(e)
    }
}

impl From<LossError> for TrainError {
    fn from(e: LossError) -> Self {
        TrainError::Loss(e)
    }
}

impl From<ControllerError> for TrainError {
    fn from(e: ControllerError) -> Self {
        TrainError::Controller(e)
    }
}

/// Linear-interpolation percentile (inclusive endpoints) of `values`.
pub fn percentile(values: &[f64], m: f64) -> Result<f64, TrainError> {
    if values.is_empty() {
        return Err(TrainError::EmptyValues);
    }
    if !(m > 0.0 && m < 100.0) {
        return Err(TrainError::BadPercent { m });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::NonFiniteValues);
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let rank = m / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank as usize;
    let frac = rank - lo as f64;
    if lo + 1 < sorted.len() {
        Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
    } else {
        Ok(sorted[sorted.len() - 1])
    }
}

/// Train and validation splits a run trains on.
#[derive(Clone, Copy)]
pub struct SplitData<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
}

impl<'a> SplitData<'a> {
    pub fn new(train: &'a Dataset, val: &'a Dataset) -> Result<Self, TrainError> {
        if train.is_empty() || val.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        if train.feature_width() != val.feature_width() {
            return Err(TrainError::FeatureMismatch {
                expected: train.feature_width(),
                got: val.feature_width(),
            });
        }
        Ok(Self { train, val })
    }
}

/// Best-epoch bookkeeping for early stopping.
struct BestTracker {
    loss: f64,
    epoch: usize,
    model: Option<MlpModel>,
    wait: usize,
}

impl BestTracker {
    fn new() -> Self {
        Self {
            loss: f64::INFINITY,
            epoch: 0,
            model: None,
            wait: 0,
        }
    }

    /// Returns true when patience ran out.
    fn observe(
        &mut self,
        epoch: usize,
        val_loss: f64,
        eligible: bool,
        model: &MlpModel,
        patience: usize,
    ) -> bool {
        if eligible && val_loss < self.loss {
            self.loss = val_loss;
            self.epoch = epoch;
            self.model = Some(model.clone());
            self.wait = 0;
            false
        } else {
            self.wait += 1;
            self.wait >= patience
        }
    }
}

/// One run's mutable training state.
pub struct Trainer {
    cfg: TrainConfig,
    model: MlpModel,
    opt: AdamState,
    rng: ChaCha8Rng,
    records: Vec<EpochRecord>,
    epoch: usize,
}

impl Trainer {
    pub fn new(input_width: usize, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let mut widths = Vec::with_capacity(cfg.hidden.len() + 2);
        widths.push(input_width);
        widths.extend_from_slice(&cfg.hidden);
        widths.push(cfg.loss_kind.output_width());
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for i in 1..widths.len() {
            let act = if i == widths.len() - 1 {
                Activation::Linear
            } else {
                Activation::Relu
            };
            layers.push(LayerSpec::new(widths[i - 1], widths[i], act));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = MlpModel::init(layers, cfg.l2_first_layer, &mut rng)?;
        let opt = AdamState::new(&model, cfg.learning_rate);
        Ok(Self {
            cfg,
            model,
            opt,
            rng,
            records: Vec::new(),
            epoch: 0,
        })
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One pass over the shuffled training set. For the abstention stage,
    /// the controller sees every batch's sigmas and may adjust `alpha` at
    /// window boundaries. Returns the mean per-sample training loss.
    fn train_epoch(
        &mut self,
        train: &Dataset,
        mode: EpochMode<'_>,
    ) -> Result<f64, TrainError> {
        let n = train.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let mut loss_sum = 0.0;
        let mut grads_out: Vec<(f64, f64)> = Vec::with_capacity(self.cfg.batch_size);
        let mut point_grads: Vec<f64> = Vec::with_capacity(self.cfg.batch_size);
        let mut sigmas: Vec<f64> = Vec::with_capacity(self.cfg.batch_size);

        let mut abst = mode;
        for chunk in order.chunks(self.cfg.batch_size) {
            let bx = train.x.gather_rows(chunk);
            let cache = self.model.forward_cached(&bx)?;
            match &mut abst {
                EpochMode::Nll => {
                    let preds = self.model.prediction_pairs(&cache);
                    grads_out.clear();
                    for (&i, pred) in chunk.iter().zip(&preds) {
                        let y = train.y[i];
                        loss_sum += loss::gaussian_nll(y, *pred);
                        grads_out.push(loss::gaussian_nll_gradients(y, *pred));
                    }
                    let grads = self.model.backward(&bx, &cache, &grads_out)?;
                    self.opt.step(&mut self.model, &grads)?;
                }
                EpochMode::Mae => {
                    let preds = self.model.point_predictions(&cache);
                    point_grads.clear();
                    for (&i, &mu) in chunk.iter().zip(&preds) {
                        let y = train.y[i];
                        loss_sum += loss::mae_loss(y, mu);
                        point_grads.push(loss::mae_gradient(y, mu));
                    }
                    let grads = self.model.backward_point(&bx, &cache, &point_grads)?;
                    self.opt.step(&mut self.model, &grads)?;
                }
                EpochMode::Abstention {
                    kappa,
                    tau,
                    controller,
                    control_log,
                    epoch,
                } => {
                    let preds = self.model.prediction_pairs(&cache);
                    let params = AbstentionParams::new(controller.alpha(), *kappa)?;
                    grads_out.clear();
                    sigmas.clear();
                    for (&i, pred) in chunk.iter().zip(&preds) {
                        let y = train.y[i];
                        loss_sum += loss::abstention_loss(y, *pred, params);
                        grads_out.push(loss::abstention_gradients(y, *pred, params));
                        sigmas.push(pred.sigma);
                    }
                    let grads = self.model.backward(&bx, &cache, &grads_out)?;
                    self.opt.step(&mut self.model, &grads)?;
                    if let Some(step) = controller.observe_batch(&sigmas, *tau)? {
                        control_log.push((*epoch, step));
                    }
                }
            }
        }
        Ok(loss_sum / n as f64)
    }

    /// Mean loss (and abstention fraction when `tau` is given) over a split.
    fn evaluate(
        &self,
        ds: &Dataset,
        kind: LossKind,
        params: Option<AbstentionParams>,
        tau: Option<f64>,
    ) -> Result<(f64, Option<f64>), TrainError> {
        let n = ds.len();
        let mut loss_sum = 0.0;
        let mut abstained = 0usize;
        let all: Vec<usize> = (0..n).collect();
        for chunk in all.chunks(EVAL_CHUNK) {
            let bx = ds.x.gather_rows(chunk);
            let cache = self.model.forward_cached(&bx)?;
            if kind == LossKind::Mae {
                let preds = self.model.point_predictions(&cache);
                for (&i, &mu) in chunk.iter().zip(&preds) {
                    loss_sum += loss::mae_loss(ds.y[i], mu);
                }
            } else {
                let preds = self.model.prediction_pairs(&cache);
                for (&i, pred) in chunk.iter().zip(&preds) {
                    loss_sum += loss::loss_value(kind, ds.y[i], *pred, params)?;
                    if let Some(t) = tau {
                        if pred.sigma > t {
                            abstained += 1;
                        }
                    }
                }
            }
        }
        let frac = tau.map(|_| abstained as f64 / n as f64);
        Ok((loss_sum / n as f64, frac))
    }

    /// Predicted sigmas over a whole split.
    fn predict_sigmas(&self, ds: &Dataset) -> Result<Vec<f64>, TrainError> {
        let mut out = Vec::with_capacity(ds.len());
        let all: Vec<usize> = (0..ds.len()).collect();
        for chunk in all.chunks(EVAL_CHUNK) {
            let bx = ds.x.gather_rows(chunk);
            let preds = self.model.forward(&bx)?;
            out.extend(preds.iter().map(|p| p.sigma));
        }
        Ok(out)
    }

    /// Spin-up stage: `n_spin` epochs on the baseline loss, then freeze the
    /// validation sigma percentiles into `kappa`/`tau` and build the
    /// controller.
    pub fn run_spinup(&mut self, data: &SplitData) -> Result<AbstentionState, TrainError> {
        for _ in 0..self.cfg.n_spin {
            let train_loss = self.train_epoch(data.train, EpochMode::Nll)?;
            let (val_loss, _) = self.evaluate(data.val, LossKind::GaussianNll, None, None)?;
            self.records.push(EpochRecord {
                epoch: self.epoch,
                stage: StageTag::Spinup,
                train_loss,
                val_loss,
                val_abstention: None,
                alpha: None,
            });
            self.epoch += 1;
        }
        let sigmas = self.predict_sigmas(data.val)?;
        if sigmas.iter().any(|s| !s.is_finite()) {
            return Err(TrainError::Diverged { epoch: self.epoch });
        }
        let mut percentiles = Vec::with_capacity(9);
        for m in (10..=90).step_by(10) {
            percentiles.push((m as u8, percentile(&sigmas, m as f64)?));
        }
        let kappa = percentiles[8].1;
        let (tau, controller) = match self.cfg.alpha_mode {
            AlphaMode::Constant { alpha } => (kappa, constant_alpha_controller(alpha)),
            AlphaMode::Pid { gains } => {
                let m = self
                    .cfg
                    .coverage_setpoint_percent
                    .expect("validated: pid mode has a coverage setpoint");
                let tau = percentiles
                    .iter()
                    .find(|&&(p, _)| p == m)
                    .expect("m is a multiple of 10 in 10..=90")
                    .1;
                let cfg = PidConfig {
                    kp: gains.kp,
                    ki: gains.ki,
                    kd: gains.kd,
                    window_batches: gains.window_batches,
                    alpha_min: 0.0,
                    alpha_max: gains.alpha_max,
                    setpoint: (100 - m) as f64 / 100.0,
                };
                (tau, AlphaController::pid(cfg)?)
            }
        };
        Ok(AbstentionState {
            kappa,
            tau,
            percentiles,
            controller,
            stage: Stage::Abstention,
        })
    }

    /// Abstention stage: trains with the abstention loss until early
    /// stopping, returning the best (setpoint-eligible) checkpoint.
    pub fn run_abstention_stage(
        &mut self,
        mut state: AbstentionState,
        data: &SplitData,
    ) -> Result<RunRecord, TrainError> {
        assert!(state.stage == Stage::Abstention, "spin-up must run first");
        let setpoint = state.controller.setpoint();
        let mut control_log: Vec<(usize, ControlStep)> = Vec::new();
        let mut best = BestTracker::new();
        let mut closest = f64::INFINITY;
        let mut closest_frac = f64::NAN;
        let mut stopped_early = false;

        while self.epoch < self.cfg.max_epochs {
            let epoch = self.epoch;
            let train_loss = self.train_epoch(
                data.train,
                EpochMode::Abstention {
                    kappa: state.kappa,
                    tau: state.tau,
                    controller: &mut state.controller,
                    control_log: &mut control_log,
                    epoch,
                },
            )?;
            let alpha = state.controller.alpha();
            let params = AbstentionParams::new(alpha, state.kappa)?;
            let (val_loss, val_abst) = self.evaluate(
                data.val,
                LossKind::Abstention,
                Some(params),
                Some(state.tau),
            )?;
            let val_abst = val_abst.expect("tau was provided");
            self.records.push(EpochRecord {
                epoch,
                stage: StageTag::Abstention,
                train_loss,
                val_loss,
                val_abstention: Some(val_abst),
                alpha: Some(alpha),
            });
            self.epoch += 1;

            let eligible = match setpoint {
                None => true,
                Some(sp) => {
                    let dist = (val_abst - sp).abs();
                    if dist < closest {
                        closest = dist;
                        closest_frac = val_abst;
                    }
                    dist <= 0.1
                }
            };
            if best.observe(epoch, val_loss, eligible, &self.model, self.cfg.patience) {
                stopped_early = true;
                break;
            }
        }

        let best_model = match best.model {
            Some(m) => m,
            None => match setpoint {
                Some(sp) => {
                    return Err(TrainError::SetpointUnreachable {
                        setpoint: sp,
                        closest: closest_frac,
                    })
                }
                None => return Err(TrainError::Diverged { epoch: self.epoch }),
            },
        };
        Ok(RunRecord {
            seed: self.cfg.seed,
            loss_kind: LossKind::Abstention,
            records: core::mem::take(&mut self.records),
            best_model,
            best_epoch: best.epoch,
            best_val_loss: best.loss,
            final_model: self.model.clone(),
            abstention: Some(AbstentionSummary {
                kappa: state.kappa,
                tau: state.tau,
                percentiles: state.percentiles,
                setpoint,
                control_log,
            }),
            stopped_early,
        })
    }

    /// Single-stage baseline run (Gaussian NLL or MAE) with early stopping.
    pub fn run_baseline(&mut self, data: &SplitData) -> Result<RunRecord, TrainError> {
        let kind = self.cfg.loss_kind;
        assert!(
            kind != LossKind::Abstention,
            "abstention runs use run_spinup + run_abstention_stage"
        );
        let mode = if kind == LossKind::Mae {
            EpochMode::Mae
        } else {
            EpochMode::Nll
        };
        let mut best = BestTracker::new();
        let mut stopped_early = false;
        while self.epoch < self.cfg.max_epochs {
            let epoch = self.epoch;
            let train_loss = self.train_epoch(data.train, mode.reborrow())?;
            let (val_loss, _) = self.evaluate(data.val, kind, None, None)?;
            self.records.push(EpochRecord {
                epoch,
                stage: StageTag::Baseline,
                train_loss,
                val_loss,
                val_abstention: None,
                alpha: None,
            });
            self.epoch += 1;
            if best.observe(epoch, val_loss, true, &self.model, self.cfg.patience) {
                stopped_early = true;
                break;
            }
        }
        let best_model = best
            .model
            .ok_or(TrainError::Diverged { epoch: self.epoch })?;
        Ok(RunRecord {
            seed: self.cfg.seed,
            loss_kind: kind,
            records: core::mem::take(&mut self.records),
            best_model,
            best_epoch: best.epoch,
            best_val_loss: best.loss,
            final_model: self.model.clone(),
            abstention: None,
            stopped_early,
        })
    }
}

/// Per-epoch training mode; the abstention variant carries the live
/// controller and window log.
enum EpochMode<'a> {
    Nll,
    Mae,
    Abstention {
        kappa: f64,
        tau: f64,
        controller: &'a mut AlphaController,
        control_log: &'a mut Vec<(usize, ControlStep)>,
        epoch: usize,
    },
}

impl EpochMode<'_> {
    /// Cheap copy for the stateless modes (the abstention variant is only
    /// constructed fresh each epoch).
    fn reborrow(&self) -> EpochMode<'static> {
        match self {
            EpochMode::Nll => EpochMode::Nll,
            EpochMode::Mae => EpochMode::Mae,
            EpochMode::Abstention { .. } => unreachable!("abstention mode is rebuilt per epoch"),
        }
    }
}

/// Runs the protocol selected by `cfg.loss_kind`.
pub fn run(data: &SplitData, cfg: &TrainConfig) -> Result<RunRecord, TrainError> {
    let mut trainer = Trainer::new(data.train.feature_width(), cfg.clone())?;
    if cfg.loss_kind == LossKind::Abstention {
        let state = trainer.run_spinup(data)?;
        trainer.run_abstention_stage(state, data)
    } else {
        trainer.run_baseline(data)
    }
}

/// Trains `n_models` runs differing only in the seed (`seed + run index`).
pub fn run_ensemble(
    data: &SplitData,
    cfg: &TrainConfig,
    n_models: usize,
) -> Result<Vec<RunRecord>, TrainError> {
    let mut out = Vec::with_capacity(n_models);
    for i in 0..n_models {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = cfg.seed.wrapping_add(i as u64);
        out.push(run(data, &run_cfg).map_err(|e| TrainError::RunFailed {
            run: i,
            source: Box::new(e),
        })?);
    }
    Ok(out)
}

/// Seed for ensemble member `i`, shared with external parallel runners.
pub fn ensemble_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

#[allow(dead_code)]
fn _assert_send() {
    fn takes_send<T: Send>() {}
    takes_send::<RunRecord>();
    takes_send::<TrainConfig>();
}
