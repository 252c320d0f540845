//! Per-run artifacts: checkpoint file, metrics/controller/evaluation CSVs,
//! and the run summary JSON. Every file embeds the producing config hash.

use std::fs;
use std::path::{Path, PathBuf};

use abstention_core::evaluate::{CalibrationStats, CoverageCurve, Envelope};
use abstention_core::net::{LayerSpec, MlpModel, SigmaTransform};
use abstention_core::trainer::RunRecord;
use serde::{Deserialize, Serialize};

use crate::config::ModelKind;
use crate::error::CliError;

/// Checkpoint container: layer specs plus flattened 64-bit parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub format_version: u32,
    pub config_hash: String,
    pub layers: Vec<LayerSpec>,
    pub sigma_transform: SigmaTransform,
    pub l2_first_layer: f64,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

pub fn save_checkpoint(path: &Path, model: &MlpModel, config_hash: &str) -> Result<(), CliError> {
    let file = CheckpointFile {
        format_version: 1,
        config_hash: config_hash.to_string(),
        layers: model.layer_specs().to_vec(),
        sigma_transform: model.sigma_transform(),
        l2_first_layer: model.l2_first_layer(),
        weights: model.weights().to_vec(),
        biases: model.biases().to_vec(),
    };
    write_text(path, &serde_json::to_string(&file)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpModel, CheckpointFile), CliError> {
    let text = fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    let model = MlpModel::from_parts(
        file.layers.clone(),
        file.weights.clone(),
        file.biases.clone(),
        file.sigma_transform,
        file.l2_first_layer,
    )
    .map_err(|e| CliError::new("checkpoint", format!("{}: {e}", path.display())))?;
    Ok((model, file))
}

/// Summary of one finished run, written next to its artifacts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub model: ModelKind,
    pub seed: u64,
    pub seed_index: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub setpoint: Option<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs: usize,
    pub stopped_early: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub percentiles: Option<Vec<(u8, f64)>>,
    /// Fraction of test sigmas at or below tau (abstaining models).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub realized_coverage: Option<f64>,
    pub wall_seconds: f64,
    /// Dataset files this run trained and evaluated on.
    pub data_files: Vec<PathBuf>,
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `metrics.csv`: one row per epoch.
pub fn write_metrics_csv(path: &Path, record: &RunRecord, config_hash: &str) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(&format!("# config_hash={config_hash}\n"));
    out.push_str("epoch,stage,train_loss,val_loss,val_abstention,alpha\n");
    for r in &record.records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch,
            r.stage.as_str(),
            r.train_loss,
            r.val_loss,
            fmt_opt(r.val_abstention),
            fmt_opt(r.alpha),
        ));
    }
    write_text(path, &out)
}

/// `controller.csv`: one row per completed PID window.
pub fn write_controller_csv(
    path: &Path,
    record: &RunRecord,
    config_hash: &str,
) -> Result<(), CliError> {
    let summary = match &record.abstention {
        Some(s) if !s.control_log.is_empty() => s,
        _ => return Ok(()),
    };
    let mut out = String::new();
    out.push_str(&format!("# config_hash={config_hash}\n"));
    out.push_str("epoch,window,measured_abstention,error,delta_alpha,alpha\n");
    for (epoch, step) in &summary.control_log {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            epoch,
            step.window_index,
            step.measured_abstention,
            step.error,
            step.delta_alpha,
            step.alpha,
        ));
    }
    write_text(path, &out)
}

/// `evaluation.csv`: MAE at each coverage level (plus the tau-defined point
/// for abstaining models, whose coverage is the realized one).
pub fn write_evaluation_csv(
    path: &Path,
    curves: &[&CoverageCurve],
    config_hash: &str,
) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(&format!("# config_hash={config_hash}\n"));
    out.push_str("coverage,mae,n_covered,tag,seed\n");
    for curve in curves {
        for i in 0..curve.levels.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                curve.levels[i],
                fmt_opt(curve.mae[i]),
                curve.n_covered[i],
                curve.tag.as_str(),
                curve.seed,
            ));
        }
    }
    write_text(path, &out)
}

/// `calibration.csv`: z-score histogram per split.
pub fn write_calibration_csv(
    path: &Path,
    stats: &[(&str, &CalibrationStats)],
    config_hash: &str,
) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(&format!("# config_hash={config_hash}\n"));
    out.push_str("bin_left,bin_right,count,split\n");
    for (split, s) in stats {
        let edges = &s.bin_edges;
        for (i, &count) in s.counts.iter().enumerate() {
            let (left, right) = if i == 0 {
                ("-inf".to_string(), edges[0].to_string())
            } else if i == s.counts.len() - 1 {
                (edges[edges.len() - 1].to_string(), "inf".to_string())
            } else {
                (edges[i - 1].to_string(), edges[i].to_string())
            };
            out.push_str(&format!("{left},{right},{count},{split}\n"));
        }
    }
    write_text(path, &out)
}

/// `envelope.csv`: pointwise ensemble envelope for one model family.
pub fn write_envelope_csv(
    path: &Path,
    envelopes: &[(&str, &Envelope)],
    config_hash: &str,
) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(&format!("# config_hash={config_hash}\n"));
    out.push_str("coverage,min_mae,median_mae,max_mae,tag\n");
    for (tag, env) in envelopes {
        for i in 0..env.levels.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                env.levels[i],
                fmt_opt(env.min[i]),
                fmt_opt(env.median[i]),
                fmt_opt(env.max[i]),
                tag,
            ));
        }
    }
    write_text(path, &out)
}

/// `can_points.csv`: one (realized coverage, MAE) dot per abstaining run.
pub fn write_can_points_csv(
    path: &Path,
    points: &[CanPoint],
    config_hash: &str,
) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(&format!("# config_hash={config_hash}\n"));
    out.push_str("coverage,mae,setpoint,seed\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.coverage,
            p.mae,
            fmt_opt(p.setpoint),
            p.seed
        ));
    }
    write_text(path, &out)
}

/// Realized-coverage dot of one abstaining run.
#[derive(Clone, Copy, Debug)]
pub struct CanPoint {
    pub coverage: f64,
    pub mae: f64,
    pub setpoint: Option<f64>,
    pub seed: u64,
}

pub fn save_run_summary(path: &Path, summary: &RunSummary) -> Result<(), CliError> {
    write_text(path, &serde_json::to_string_pretty(summary)?)
}

pub fn load_run_summary(path: &Path) -> Result<RunSummary, CliError> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use abstention_core::net::Activation;
    use abstention_core::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip_reproduces_forward_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let specs = vec![
            LayerSpec::new(4, 6, Activation::Relu),
            LayerSpec::new(6, 2, Activation::Linear),
        ];
        let model = MlpModel::init(specs, 0.05, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        save_checkpoint(&path, &model, "hash").unwrap();
        let (back, file) = load_checkpoint(&path).unwrap();
        assert_eq!(file.format_version, 1);
        assert_eq!(back, model);

        let batch = Matrix::from_rows(&[&[0.37, -1.2, 0.003, 2.5e-7]]);
        let a = model.forward(&batch).unwrap();
        let b = back.forward(&batch).unwrap();
        assert_eq!(a[0].mu.to_bits(), b[0].mu.to_bits());
        assert_eq!(a[0].sigma.to_bits(), b[0].sigma.to_bits());
    }
}
