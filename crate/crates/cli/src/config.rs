//! Experiment configuration: one human-editable TOML file describes the
//! data, the training protocol, and the ensemble. Every output embeds the
//! SHA-256 hash of the resolved config.

use std::fs;
use std::path::Path;

use abstention_core::loss::LossKind;
use abstention_core::synthdata::{EnsoBox, GridSpec};
use abstention_core::trainer::{AlphaMode, PidGains, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Oned,
    EnsoPid,
    EnsoConst,
    Corrupt,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Oned => "oned",
            ExperimentKind::EnsoPid => "enso_pid",
            ExperimentKind::EnsoConst => "enso_const",
            ExperimentKind::Corrupt => "corrupt",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "oned" => ExperimentKind::Oned,
            "enso_pid" => ExperimentKind::EnsoPid,
            "enso_const" => ExperimentKind::EnsoConst,
            "corrupt" => ExperimentKind::Corrupt,
            other => {
                return Err(CliError::usage(format!(
                    "unknown experiment '{other}' (expected oned, enso_pid, enso_const, corrupt)"
                )))
            }
        })
    }

    pub fn is_climate(self) -> bool {
        !matches!(self, ExperimentKind::Oned)
    }
}

/// Which models to train for an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Baseline,
    Can,
    Mae,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Can => "can",
            ModelKind::Mae => "mae",
        }
    }

    pub fn loss_kind(self) -> LossKind {
        match self {
            ModelKind::Baseline => LossKind::GaussianNll,
            ModelKind::Can => LossKind::Abstention,
            ModelKind::Mae => LossKind::Mae,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Climate experiments only.
    pub grid: GridSpec,
    pub length_scale_km: f64,
    pub nugget: f64,
    pub enso_box: EnsoBox,
    pub enso_threshold: f64,
    pub corrupt_sample_fraction: f64,
    pub corrupt_pixel_fraction: f64,
    pub corrupt_fill: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 8000,
            n_val: 5000,
            n_test: 5000,
            grid: GridSpec::climate(),
            length_scale_km: 2500.0,
            nugget: 1e-6,
            enso_box: EnsoBox::default(),
            enso_threshold: 0.5,
            corrupt_sample_fraction: 0.30,
            corrupt_pixel_fraction: 0.66,
            corrupt_fill: -4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub n_spin: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Constant-alpha experiments.
    pub alpha: f64,
    /// Abstention setpoints for the PID experiment.
    pub setpoints: Vec<f64>,
    pub pid: PidGains,
    pub l2_first_layer: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            seed: 0,
            hidden: vec![50, 25],
            learning_rate: 0.0005,
            batch_size: 32,
            n_spin: 15,
            max_epochs: 500,
            patience: 60,
            alpha: 0.1,
            setpoints: Vec::new(),
            pid: PidGains::default(),
            l2_first_layer: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub size: usize,
    pub models: Vec<ModelKind>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            size: 20,
            models: vec![ModelKind::Baseline, ModelKind::Can, ModelKind::Mae],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
}

impl ExperimentConfig {
    /// Built-in defaults for each experiment.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut cfg = Self {
            experiment: kind,
            data: DataConfig::default(),
            train: TrainSection::default(),
            ensemble: EnsembleConfig::default(),
        };
        match kind {
            ExperimentKind::Oned => {
                cfg.data.n_train = 3000;
                cfg.data.n_val = 1000;
                cfg.data.n_test = 1000;
                cfg.train.hidden = vec![5, 5];
                cfg.train.learning_rate = 0.0001;
                cfg.train.n_spin = 225;
                cfg.train.max_epochs = 2000;
                cfg.train.alpha = 0.1;
            }
            ExperimentKind::EnsoPid => {
                cfg.train.setpoints = (1..=9).map(|k| k as f64 / 10.0).collect();
                cfg.ensemble.models = vec![ModelKind::Baseline, ModelKind::Can, ModelKind::Mae];
            }
            ExperimentKind::EnsoConst => {
                cfg.train.alpha = 0.1;
            }
            ExperimentKind::Corrupt => {
                cfg.train.alpha = 0.05;
            }
        }
        cfg
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::new("config", e.to_string()))
    }

    /// SHA-256 of the canonical JSON serialization, as lowercase hex.
    pub fn hash(&self) -> Result<String, CliError> {
        let canonical = serde_json::to_string(self)?;
        let digest = Sha256::digest(canonical.as_bytes());
        let mut out = String::with_capacity(64);
        for byte in digest {
            use std::fmt::Write;
            let _ = write!(out, "{byte:02x}");
        }
        Ok(out)
    }

    /// Overrides both the data and train seeds (the `--seed` flag).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.ensemble.size == 0 || self.ensemble.models.is_empty() {
            return Err(CliError::new("config", "ensemble needs size >= 1 and at least one model"));
        }
        if self.experiment == ExperimentKind::EnsoPid {
            if self.train.setpoints.is_empty() {
                return Err(CliError::new("config", "enso_pid needs at least one setpoint"));
            }
            for &s in &self.train.setpoints {
                let m = (s * 100.0).round();
                if !(10.0..=90.0).contains(&m) || !(m as u32).is_multiple_of(10) {
                    return Err(CliError::new(
                        "config",
                        format!("setpoint {s} must be a multiple of 0.1 in [0.1, 0.9]"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Core training config for one run.
    pub fn train_config(&self, model: ModelKind, setpoint: Option<f64>, seed: u64) -> TrainConfig {
        let alpha_mode = match (model, setpoint) {
            (ModelKind::Can, Some(_)) => AlphaMode::Pid {
                gains: self.train.pid,
            },
            _ => AlphaMode::Constant {
                alpha: self.train.alpha,
            },
        };
        let coverage = setpoint.map(|s| (100.0 - s * 100.0).round() as u8);
        TrainConfig {
            hidden: self.train.hidden.clone(),
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            n_spin: self.train.n_spin,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            loss_kind: model.loss_kind(),
            alpha_mode,
            coverage_setpoint_percent: coverage,
            l2_first_layer: self.train.l2_first_layer,
            seed,
        }
    }
}
