//! Fast end-to-end check on the 1-D example: the abstaining network should
//! keep the tight line samples and drop the noisy cloud.

use abstention_core::evaluate::{tau_covered, zscores};
use abstention_core::loss::LossKind;
use abstention_core::synthdata::{make_1d_dataset, SampleFlag, Split};
use abstention_core::trainer::{run, AlphaMode, SplitData, TrainConfig};

fn one_d_config(kind: LossKind, seed: u64) -> TrainConfig {
    TrainConfig {
        hidden: vec![5, 5],
        learning_rate: 0.0001,
        batch_size: 32,
        n_spin: 225,
        max_epochs: 2000,
        patience: 60,
        loss_kind: kind,
        alpha_mode: AlphaMode::Constant { alpha: 0.1 },
        coverage_setpoint_percent: None,
        l2_first_layer: 0.0,
        seed,
    }
}

#[test]
fn abstaining_run_recovers_the_line_subset() {
    let train = make_1d_dataset(3000, 100, Split::Train);
    let val = make_1d_dataset(1000, 101, Split::Val);
    let test = make_1d_dataset(1000, 102, Split::Test);
    let data = SplitData::new(&train, &val).unwrap();

    let record = run(&data, &one_d_config(LossKind::Abstention, 1)).unwrap();
    let summary = record.abstention.as_ref().unwrap();
    let preds = record.best_model.forward(&test.x).unwrap();
    let covered = tau_covered(&preds, summary.tau);
    let coverage = covered.len() as f64 / preds.len() as f64;
    assert!(
        (0.12..=0.35).contains(&coverage),
        "realized coverage {coverage}"
    );
    let line_frac = covered
        .iter()
        .filter(|&&i| test.flags[i] == SampleFlag::Line)
        .count() as f64
        / covered.len() as f64;
    assert!(line_frac > 0.9, "covered set is {line_frac} line samples");
}

#[test]
fn baseline_run_is_calibrated_on_train_and_validation() {
    let train = make_1d_dataset(3000, 100, Split::Train);
    let val = make_1d_dataset(1000, 101, Split::Val);
    let data = SplitData::new(&train, &val).unwrap();

    let record = run(&data, &one_d_config(LossKind::GaussianNll, 2)).unwrap();
    for ds in [&train, &val] {
        let preds = record.best_model.forward(&ds.x).unwrap();
        let stats = zscores(&preds, &ds.y).unwrap();
        assert!(stats.mean.abs() < 0.1, "z mean {}", stats.mean);
        assert!(
            (0.85..=1.15).contains(&stats.std),
            "z std {}",
            stats.std
        );
    }
}
