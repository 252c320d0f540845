//! The four pipeline stages: generate, train, evaluate, reproduce.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use abstention_core::evaluate::{
    ensemble_envelope, tau_covered, zscores, CalibrationStats, CoverageCurve, Envelope, ModelTag,
};
use abstention_core::synthdata::{
    build_correlation, build_response, corrupt_transform, derive_seed, enso_transform,
    make_1d_dataset, make_climate_dataset, Dataset, SampleFlag, Split,
};
use abstention_core::trainer::{self, ensemble_seed, RunRecord, SplitData};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, ExperimentKind, ModelKind};
use crate::dataio::{read_dataset, write_dataset, DatasetHeader};
use crate::error::CliError;
use crate::runio::{
    save_checkpoint, save_run_summary, write_calibration_csv, write_can_points_csv,
    write_controller_csv, write_envelope_csv, write_evaluation_csv, write_metrics_csv, CanPoint,
    RunSummary,
};
use crate::svg;

/// Coverage levels used by evaluation tables: 0.05, 0.10, ..., 1.00.
pub fn standard_levels() -> Vec<f64> {
    (1..=20).map(|k| k as f64 / 20.0).collect()
}

/// Hash of the parts that determine dataset bytes (experiment + data
/// section), used to detect stale dataset files.
fn data_hash(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let canonical = serde_json::to_string(&(&cfg.experiment, &cfg.data))?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn split_sizes(cfg: &ExperimentConfig) -> [(Split, usize); 3] {
    [
        (Split::Train, cfg.data.n_train),
        (Split::Val, cfg.data.n_val),
        (Split::Test, cfg.data.n_test),
    ]
}

fn stat_entry(map: &mut serde_json::Map<String, serde_json::Value>, key: &str, value: f64) {
    map.insert(key.to_string(), serde_json::json!(value));
}

fn flag_fraction(ds: &Dataset, flag: SampleFlag) -> f64 {
    ds.flags.iter().filter(|&&f| f == flag).count() as f64 / ds.len().max(1) as f64
}

#[derive(Debug)]
pub struct GenerateOutput {
    pub data_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Builds the three splits of an experiment in memory, exactly as
/// `generate` writes them.
pub fn build_datasets(cfg: &ExperimentConfig) -> Result<[Dataset; 3], CliError> {
    cfg.validate()?;
    // Climate experiments share one correlation model and response field.
    let climate = if cfg.experiment.is_climate() {
        let corr = build_correlation(cfg.data.grid, cfg.data.length_scale_km, cfg.data.nugget)?;
        let field = build_response(&corr, derive_seed(cfg.data.seed, 100));
        Some((corr, field))
    } else {
        None
    };
    let mut out = Vec::with_capacity(3);
    for (idx, (split, n)) in split_sizes(cfg).into_iter().enumerate() {
        let split_seed = derive_seed(cfg.data.seed, idx as u64);
        let ds = match (&climate, cfg.experiment) {
            (None, _) => make_1d_dataset(n, split_seed, split),
            (Some((corr, field)), kind) => {
                let base = make_climate_dataset(corr, field, n, split_seed, split);
                match kind {
                    ExperimentKind::EnsoPid | ExperimentKind::EnsoConst => enso_transform(
                        &base,
                        &cfg.data.grid,
                        &cfg.data.enso_box,
                        cfg.data.enso_threshold,
                        derive_seed(cfg.data.seed, 200 + idx as u64),
                    )?,
                    ExperimentKind::Corrupt => corrupt_transform(
                        &base,
                        cfg.data.corrupt_sample_fraction,
                        cfg.data.corrupt_pixel_fraction,
                        cfg.data.corrupt_fill,
                        derive_seed(cfg.data.seed, 300 + idx as u64),
                    )?,
                    ExperimentKind::Oned => unreachable!("oned has no grid"),
                }
            }
        };
        out.push(ds);
    }
    Ok(out.try_into().expect("three splits"))
}

pub fn cmd_generate(
    cfg: &ExperimentConfig,
    out: &Path,
    force: bool,
) -> Result<GenerateOutput, CliError> {
    let config_hash = cfg.hash()?;
    let data_hash = data_hash(cfg)?;
    let data_dir = out.join("data");
    let first = data_dir.join("train.bin");
    if first.exists() && !force {
        return Err(CliError::exists(&first));
    }
    std::fs::create_dir_all(&data_dir)?;

    let datasets = build_datasets(cfg)?;
    let mut files = Vec::new();
    let mut meta_all = BTreeMap::new();
    for ((split, _), ds) in split_sizes(cfg).into_iter().zip(datasets) {
        let mut metadata = serde_json::Map::new();
        metadata.insert("data_hash".to_string(), serde_json::json!(data_hash));
        let mean = ds.y.iter().sum::<f64>() / ds.len() as f64;
        let var = ds.y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (ds.len() - 1).max(1) as f64;
        stat_entry(&mut metadata, "y_mean", mean);
        stat_entry(&mut metadata, "y_std", var.sqrt());
        match cfg.experiment {
            ExperimentKind::Oned => {
                stat_entry(&mut metadata, "line_fraction", flag_fraction(&ds, SampleFlag::Line));
            }
            ExperimentKind::EnsoPid | ExperimentKind::EnsoConst => {
                stat_entry(
                    &mut metadata,
                    "signal_fraction",
                    flag_fraction(&ds, SampleFlag::Signal),
                );
            }
            ExperimentKind::Corrupt => {
                stat_entry(
                    &mut metadata,
                    "corrupted_fraction",
                    flag_fraction(&ds, SampleFlag::Corrupted),
                );
            }
        }

        let header = DatasetHeader {
            format_version: 1,
            config_hash: config_hash.clone(),
            experiment: cfg.experiment.as_str().to_string(),
            split: split.as_str().to_string(),
            seed: ds.seed,
            n_samples: ds.len(),
            n_features: ds.feature_width(),
            grid: cfg.experiment.is_climate().then_some(cfg.data.grid),
            metadata: metadata.clone(),
        };
        let path = data_dir.join(format!("{}.bin", split.as_str()));
        write_dataset(&path, &ds, &header)?;
        meta_all.insert(split.as_str().to_string(), serde_json::json!(metadata));
        files.push(path);
    }

    std::fs::write(
        data_dir.join("meta.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "config_hash": config_hash,
            "data_hash": data_hash,
            "experiment": cfg.experiment.as_str(),
            "splits": meta_all,
        }))?,
    )?;
    write_config_snapshot(cfg, out)?;
    Ok(GenerateOutput { data_dir, files })
}

fn write_config_snapshot(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    let snapshot = serde_json::json!({
        "config_hash": cfg.hash()?,
        "config": cfg,
    });
    std::fs::write(out.join("config.json"), serde_json::to_string_pretty(&snapshot)?)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

/// One planned training run.
#[derive(Clone, Debug)]
struct RunPlan {
    name: String,
    model: ModelKind,
    setpoint: Option<f64>,
    seed_index: usize,
    seed: u64,
}

fn plan_runs(cfg: &ExperimentConfig) -> Vec<RunPlan> {
    let mut plans = Vec::new();
    for &model in &cfg.ensemble.models {
        match (model, cfg.experiment) {
            (ModelKind::Can, ExperimentKind::EnsoPid) => {
                for &setpoint in &cfg.train.setpoints {
                    for i in 0..cfg.ensemble.size {
                        plans.push(RunPlan {
                            name: format!("can_sp{:02}_s{i:02}", (setpoint * 100.0).round() as u32),
                            model,
                            setpoint: Some(setpoint),
                            seed_index: i,
                            seed: ensemble_seed(cfg.train.seed, i),
                        });
                    }
                }
            }
            _ => {
                for i in 0..cfg.ensemble.size {
                    plans.push(RunPlan {
                        name: format!("{}_s{i:02}", model.as_str()),
                        model,
                        setpoint: None,
                        seed_index: i,
                        seed: ensemble_seed(cfg.train.seed, i),
                    });
                }
            }
        }
    }
    plans
}

pub struct ExperimentData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub files: Vec<PathBuf>,
}

pub fn load_experiment_data(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentData, CliError> {
    let data_dir = out.join("data");
    let expected = data_hash(cfg)?;
    let read_split = |name: &str| -> Result<Dataset, CliError> {
        let path = data_dir.join(format!("{name}.bin"));
        if !path.exists() {
            return Err(CliError::new(
                "data",
                format!("{} not found; run `generate` first", path.display()),
            ));
        }
        let (ds, header) = read_dataset(&path)?;
        match header.metadata.get("data_hash") {
            Some(serde_json::Value::String(h)) if *h == expected => {}
            _ => {
                return Err(CliError::new(
                    "data",
                    format!(
                        "{} was generated from a different data config; regenerate with --force",
                        path.display()
                    ),
                ))
            }
        }
        Ok(ds)
    };
    let train = read_split("train")?;
    let val = read_split("val")?;
    let test = read_split("test")?;
    let files = ["train", "val", "test"]
        .iter()
        .map(|s| PathBuf::from("data").join(format!("{s}.bin")))
        .collect();
    Ok(ExperimentData {
        train,
        val,
        test,
        files,
    })
}

#[derive(Debug)]
pub struct TrainOutput {
    pub run_dirs: Vec<PathBuf>,
    pub failures: Vec<(String, CliError)>,
}

pub fn cmd_train(
    cfg: &ExperimentConfig,
    out: &Path,
    jobs: usize,
    force: bool,
) -> Result<TrainOutput, CliError> {
    cfg.validate()?;
    let config_hash = cfg.hash()?;
    let data = load_experiment_data(cfg, out)?;
    let runs_dir = out.join("runs");
    if runs_dir.exists() && !force {
        return Err(CliError::exists(&runs_dir));
    }
    std::fs::create_dir_all(&runs_dir)?;
    write_config_snapshot(cfg, out)?;

    let plans = plan_runs(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::new("train", e.to_string()))?;
    let results: Vec<Result<RunSummary, (String, CliError)>> = pool.install(|| {
        plans
            .par_iter()
            .map(|plan| {
                execute_run(cfg, plan, &data, &runs_dir, &config_hash)
                    .map_err(|e| (plan.name.clone(), e))
            })
            .collect()
    });

    let mut run_dirs = Vec::new();
    let mut failures = Vec::new();
    let mut summary_rows = Vec::new();
    for (plan, result) in plans.iter().zip(results) {
        match result {
            Ok(summary) => {
                run_dirs.push(runs_dir.join(&plan.name));
                summary_rows.push(serde_json::json!({
                    "run": plan.name,
                    "status": "ok",
                    "best_epoch": summary.best_epoch,
                    "realized_coverage": summary.realized_coverage,
                }));
            }
            Err((name, err)) => {
                eprintln!("{}", err.to_json());
                summary_rows.push(serde_json::json!({
                    "run": name,
                    "status": "error",
                    "kind": err.kind,
                    "message": err.message,
                }));
                failures.push((name, err));
            }
        }
    }
    std::fs::write(
        out.join("train_summary.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "config_hash": config_hash,
            "runs": summary_rows,
        }))?,
    )?;
    Ok(TrainOutput { run_dirs, failures })
}

fn execute_run(
    cfg: &ExperimentConfig,
    plan: &RunPlan,
    data: &ExperimentData,
    runs_dir: &Path,
    config_hash: &str,
) -> Result<RunSummary, CliError> {
    let started = Instant::now();
    let train_cfg = cfg.train_config(plan.model, plan.setpoint, plan.seed);
    let split = SplitData::new(&data.train, &data.val)?;
    let record = trainer::run(&split, &train_cfg)?;
    let run_dir = runs_dir.join(&plan.name);
    std::fs::create_dir_all(&run_dir)?;

    std::fs::write(
        run_dir.join("config.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "config_hash": config_hash,
            "run": plan.name,
            "model": plan.model,
            "setpoint": plan.setpoint,
            "train_config": train_cfg,
        }))?,
    )?;
    write_metrics_csv(&run_dir.join("metrics.csv"), &record, config_hash)?;
    write_controller_csv(&run_dir.join("controller.csv"), &record, config_hash)?;
    save_checkpoint(&run_dir.join("checkpoint.json"), &record.best_model, config_hash)?;

    let levels = standard_levels();
    let mut realized_coverage = None;
    {
        // Final evaluation table on the test split.
        let mut curves: Vec<CoverageCurve> = Vec::new();
        match plan.model {
            ModelKind::Mae => {
                let mu = record.best_model.forward_point(&data.test.x)?;
                let overall = mu
                    .iter()
                    .zip(&data.test.y)
                    .map(|(m, y)| (y - m).abs())
                    .sum::<f64>()
                    / mu.len() as f64;
                curves.push(CoverageCurve::flat(
                    &levels,
                    overall,
                    mu.len(),
                    ModelTag::Mae,
                    plan.seed,
                ));
            }
            _ => {
                let preds = record.best_model.forward(&data.test.x)?;
                let tag = if plan.model == ModelKind::Baseline {
                    ModelTag::Baseline
                } else {
                    ModelTag::Can
                };
                let mut curve =
                    CoverageCurve::compute(&preds, &data.test.y, &levels, tag, plan.seed)
                        .map_err(|e| CliError::new("evaluate", e.to_string()))?;
                if let Some(summary) = &record.abstention {
                    // The run's own operating point: tau-thresholded coverage.
                    let covered = tau_covered(&preds, summary.tau);
                    if !covered.is_empty() {
                        let mae = covered
                            .iter()
                            .map(|&i| (data.test.y[i] - preds[i].mu).abs())
                            .sum::<f64>()
                            / covered.len() as f64;
                        let coverage = covered.len() as f64 / preds.len() as f64;
                        realized_coverage = Some(coverage);
                        curve.levels.push(coverage);
                        curve.mae.push(Some(mae));
                        curve.n_covered.push(covered.len());
                    } else {
                        realized_coverage = Some(0.0);
                    }
                }
                curves.push(curve);
            }
        }
        let refs: Vec<&CoverageCurve> = curves.iter().collect();
        write_evaluation_csv(&run_dir.join("evaluation.csv"), &refs, config_hash)?;
    }

    if plan.model != ModelKind::Mae {
        let stats = calibration_for(&record, data)?;
        let refs: Vec<(&str, &CalibrationStats)> =
            stats.iter().map(|(s, c)| (*s, c)).collect();
        write_calibration_csv(&run_dir.join("calibration.csv"), &refs, config_hash)?;
    }

    let abst = record.abstention.as_ref();
    let summary = RunSummary {
        config_hash: config_hash.to_string(),
        model: plan.model,
        seed: plan.seed,
        seed_index: plan.seed_index,
        setpoint: plan.setpoint,
        best_epoch: record.best_epoch,
        best_val_loss: record.best_val_loss,
        epochs: record.records.len(),
        stopped_early: record.stopped_early,
        kappa: abst.map(|a| a.kappa),
        tau: abst.map(|a| a.tau),
        percentiles: abst.map(|a| a.percentiles.clone()),
        realized_coverage,
        wall_seconds: started.elapsed().as_secs_f64(),
        data_files: data.files.clone(),
    };
    save_run_summary(&run_dir.join("run.json"), &summary)?;
    eprintln!(
        "run {}: {} epochs, best {}{}",
        plan.name,
        summary.epochs,
        summary.best_epoch,
        summary
            .realized_coverage
            .map(|c| format!(", coverage {c:.3}"))
            .unwrap_or_default()
    );
    Ok(summary)
}

fn calibration_for(
    record: &RunRecord,
    data: &ExperimentData,
) -> Result<Vec<(&'static str, CalibrationStats)>, CliError> {
    let mut out = Vec::new();
    for (name, ds) in [
        ("train", &data.train),
        ("val", &data.val),
        ("test", &data.test),
    ] {
        let preds = record.best_model.forward(&ds.x)?;
        let stats =
            zscores(&preds, &ds.y).map_err(|e| CliError::new("evaluate", e.to_string()))?;
        out.push((name, stats));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct EvaluateSummary {
    config_hash: String,
    runs: usize,
    baseline_runs: usize,
    can_runs: usize,
    mae_runs: usize,
}

pub fn cmd_evaluate(run_dirs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    if run_dirs.is_empty() {
        return Err(CliError::usage("evaluate needs at least one run directory"));
    }
    std::fs::create_dir_all(out)?;

    let mut dataset_cache: BTreeMap<PathBuf, Dataset> = BTreeMap::new();
    let mut load = |root: &Path, rel: &Path| -> Result<Dataset, CliError> {
        let path = if root.join(rel).exists() {
            root.join(rel)
        } else {
            rel.to_path_buf()
        };
        if let Some(ds) = dataset_cache.get(&path) {
            return Ok(ds.clone());
        }
        let (ds, _) = read_dataset(&path)?;
        dataset_cache.insert(path, ds.clone());
        Ok(ds)
    };

    let levels = standard_levels();
    let mut config_hash: Option<String> = None;
    let mut baseline_curves = Vec::new();
    let mut mae_curves = Vec::new();
    let mut can_points = Vec::new();
    let mut calibration: Option<Vec<(&'static str, CalibrationStats)>> = None;

    let mut sorted_dirs: Vec<&PathBuf> = run_dirs.iter().collect();
    sorted_dirs.sort();
    for run_dir in sorted_dirs {
        let summary = crate::runio::load_run_summary(&run_dir.join("run.json"))?;
        match &config_hash {
            None => config_hash = Some(summary.config_hash.clone()),
            Some(h) if *h == summary.config_hash => {}
            Some(_) => {
                return Err(CliError::new(
                    "evaluate",
                    format!("{} has a different config hash", run_dir.display()),
                ))
            }
        }
        let out_root = run_dir
            .parent()
            .and_then(Path::parent)
            .unwrap_or_else(|| Path::new("."));
        let (model, _) = crate::runio::load_checkpoint(&run_dir.join("checkpoint.json"))?;
        let test = load(out_root, &summary.data_files[2])?;
        match summary.model {
            ModelKind::Mae => {
                let mu = model.forward_point(&test.x)?;
                let overall = mu
                    .iter()
                    .zip(&test.y)
                    .map(|(m, y)| (y - m).abs())
                    .sum::<f64>()
                    / mu.len() as f64;
                mae_curves.push(CoverageCurve::flat(
                    &levels,
                    overall,
                    mu.len(),
                    ModelTag::Mae,
                    summary.seed,
                ));
            }
            ModelKind::Baseline => {
                let preds = model.forward(&test.x)?;
                baseline_curves.push(
                    CoverageCurve::compute(&preds, &test.y, &levels, ModelTag::Baseline, summary.seed)
                        .map_err(|e| CliError::new("evaluate", e.to_string()))?,
                );
                if calibration.is_none() {
                    let train = load(out_root, &summary.data_files[0])?;
                    let val = load(out_root, &summary.data_files[1])?;
                    let mut stats = Vec::new();
                    for (name, ds) in [("train", &train), ("val", &val), ("test", &test)] {
                        let preds = model.forward(&ds.x)?;
                        stats.push((
                            name,
                            zscores(&preds, &ds.y)
                                .map_err(|e| CliError::new("evaluate", e.to_string()))?,
                        ));
                    }
                    calibration = Some(stats);
                }
            }
            ModelKind::Can => {
                let preds = model.forward(&test.x)?;
                let tau = summary.tau.ok_or_else(|| {
                    CliError::new("evaluate", format!("{} has no tau", run_dir.display()))
                })?;
                let covered = tau_covered(&preds, tau);
                if !covered.is_empty() {
                    let mae = covered
                        .iter()
                        .map(|&i| (test.y[i] - preds[i].mu).abs())
                        .sum::<f64>()
                        / covered.len() as f64;
                    can_points.push(CanPoint {
                        coverage: covered.len() as f64 / preds.len() as f64,
                        mae,
                        setpoint: summary.setpoint,
                        seed: summary.seed,
                    });
                }
            }
        }
    }

    let hash = config_hash.unwrap_or_default();
    let baseline_env = if baseline_curves.is_empty() {
        None
    } else {
        Some(ensemble_envelope(&baseline_curves).map_err(|e| CliError::new("evaluate", e.to_string()))?)
    };
    let mae_env = if mae_curves.is_empty() {
        None
    } else {
        Some(ensemble_envelope(&mae_curves).map_err(|e| CliError::new("evaluate", e.to_string()))?)
    };
    let mut envelopes: Vec<(&str, &Envelope)> = Vec::new();
    if let Some(env) = &baseline_env {
        envelopes.push(("baseline", env));
    }
    if let Some(env) = &mae_env {
        envelopes.push(("mae", env));
    }
    if !envelopes.is_empty() {
        write_envelope_csv(&out.join("envelope.csv"), &envelopes, &hash)?;
    }
    if !can_points.is_empty() {
        write_can_points_csv(&out.join("can_points.csv"), &can_points, &hash)?;
    }
    let figure = svg::coverage_figure(
        baseline_env.as_ref(),
        mae_env.as_ref(),
        &can_points,
        "mean absolute error vs coverage",
        &hash,
    );
    std::fs::write(out.join("coverage_mae.svg"), figure)?;

    if let Some(stats) = &calibration {
        let refs: Vec<(&str, &CalibrationStats)> = stats.iter().map(|(s, c)| (*s, c)).collect();
        write_calibration_csv(&out.join("calibration.csv"), &refs, &hash)?;
        std::fs::write(
            out.join("calibration.svg"),
            svg::calibration_figure(&refs, "standardized errors", &hash),
        )?;
    }

    std::fs::write(
        out.join("evaluate_summary.json"),
        serde_json::to_string_pretty(&EvaluateSummary {
            config_hash: hash,
            runs: run_dirs.len(),
            baseline_runs: baseline_curves.len(),
            can_runs: can_points.len(),
            mae_runs: mae_curves.len(),
        })?,
    )?;
    Ok(())
}

pub fn cmd_reproduce(
    cfg: &ExperimentConfig,
    out: &Path,
    jobs: usize,
    force: bool,
) -> Result<TrainOutput, CliError> {
    cmd_generate(cfg, out, force)?;
    let trained = cmd_train(cfg, out, jobs, true)?;
    cmd_evaluate(&trained.run_dirs, &out.join("evaluate"))?;
    Ok(trained)
}
