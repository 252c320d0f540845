//! End-to-end pipeline checks on a deliberately tiny configuration:
//! refusal semantics, config-hash propagation, and the evaluate surface.

use std::fs;

use abstention_cli::commands::{cmd_evaluate, cmd_generate, cmd_train};
use abstention_cli::config::{ExperimentConfig, ExperimentKind, ModelKind};
use abstention_cli::error::CliError;

fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::Oned);
    cfg.data.n_train = 300;
    cfg.data.n_val = 100;
    cfg.data.n_test = 100;
    cfg.data.seed = 11;
    cfg.train.seed = 11;
    cfg.train.n_spin = 25;
    cfg.train.max_epochs = 120;
    cfg.train.patience = 20;
    cfg.ensemble.size = 1;
    cfg.ensemble.models = vec![ModelKind::Baseline, ModelKind::Can, ModelKind::Mae];
    cfg
}

#[test]
fn pipeline_propagates_the_config_hash_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let cfg = tiny_config();
    let hash = cfg.hash().unwrap();

    cmd_generate(&cfg, &out, false).unwrap();
    let trained = cmd_train(&cfg, &out, 1, false).unwrap();
    assert!(trained.failures.is_empty());
    assert_eq!(trained.run_dirs.len(), 3);
    cmd_evaluate(&trained.run_dirs, &out.join("evaluate")).unwrap();

    // Every text artifact embeds the producing config hash.
    let mut checked = 0;
    for entry in walk(&out) {
        let name = entry.file_name().unwrap().to_string_lossy().to_string();
        if name.ends_with(".csv") || name.ends_with(".json") || name.ends_with(".svg") {
            if name == "meta.json" || name == "run.json" || name == "train_summary.json" {
                continue; // covered by their own schema fields below
            }
            let text = fs::read_to_string(&entry).unwrap();
            assert!(
                text.contains(&hash),
                "{} does not embed the config hash",
                entry.display()
            );
            checked += 1;
        }
    }
    assert!(checked >= 10, "only {checked} artifacts checked");

    // Dataset headers and run summaries carry it as a field.
    let (_, header) = abstention_cli::dataio::read_dataset(&out.join("data/train.bin")).unwrap();
    assert_eq!(header.config_hash, hash);
    let summary =
        abstention_cli::runio::load_run_summary(&trained.run_dirs[0].join("run.json")).unwrap();
    assert_eq!(summary.config_hash, hash);

    // The abstaining run records its realized coverage.
    let can_summary =
        abstention_cli::runio::load_run_summary(&out.join("runs/can_s00/run.json")).unwrap();
    assert!(can_summary.realized_coverage.is_some());
    assert!(can_summary.kappa.unwrap() > 0.0);
}

#[test]
fn generate_refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let cfg = tiny_config();
    cmd_generate(&cfg, &out, false).unwrap();
    let err = cmd_generate(&cfg, &out, false).unwrap_err();
    assert_eq!(err.kind, "already_exists");
    cmd_generate(&cfg, &out, true).unwrap();
}

#[test]
fn train_rejects_stale_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let cfg = tiny_config();
    cmd_generate(&cfg, &out, false).unwrap();
    let mut other = cfg.clone();
    other.data.seed = 999;
    let err = cmd_train(&other, &out, 1, false).unwrap_err();
    assert_eq!(err.kind, "data");
}

#[test]
fn evaluate_rejects_an_empty_run_list() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_evaluate(&[], dir.path()).unwrap_err();
    assert_eq!(err.kind, "usage");
}

#[test]
fn error_json_is_machine_readable() {
    let err = CliError::usage("missing argument");
    let parsed: serde_json::Value = serde_json::from_str(&err.to_json()).unwrap();
    assert_eq!(parsed["error"]["kind"], "usage");
    assert_eq!(parsed["error"]["message"], "missing argument");
}

fn walk(root: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    out
}
