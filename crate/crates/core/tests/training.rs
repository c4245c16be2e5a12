mod common;

use std::fs;
use std::path::Path;

use common::*;
use oa_complete::data::{Dataset, NormMode, Split};
use oa_complete::harness::eval::{EvalReport, CSV_HEADER};
use oa_complete::harness::{evaluate, load_checkpoint, train, HarnessError, TrainConfig};
use oa_complete::{ModelConfig, Variant};

fn dataset(dir: &Path) {
    tiny_dataset(dir, 10, 3, NormMode::Ours);
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    dataset(&data);
    let mut init = TrainConfig::new(&data, tmp.path().join("init"), Variant::D, 0, 5);
    init.learning_rate = 0.0;
    let init = train(&init).unwrap();
    let mut cfg = TrainConfig::new(&data, tmp.path().join("runs"), Variant::D, 1, 5);
    cfg.learning_rate = 0.0;
    let out = train(&cfg).unwrap();
    let a = load_checkpoint(&init.best_checkpoint).unwrap().params;
    let b = load_checkpoint(&out.last_checkpoint).unwrap().params;
    let mut compared = 0;
    for ((name, pa), (_, pb)) in a.iter().zip(b.iter()) {
        // running batchnorm statistics are buffers, not learned parameters
        if !pa.trainable {
            continue;
        }
        let same = pa.tensor.data().iter().zip(pb.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "{name} moved with lr = 0");
        compared += 1;
    }
    assert_eq!(compared, a.iter().filter(|(_, p)| p.trainable).count());
}

#[test]
fn reruns_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    dataset(&data);
    let run = |name: &str| {
        let out = train(&TrainConfig::new(&data, tmp.path().join(name), Variant::B, 2, 9)).unwrap();
        let report = evaluate(&out.best_checkpoint, &data, Split::HoldoutViews).unwrap();
        (
            fs::read(&out.best_checkpoint).unwrap(),
            fs::read(&out.last_checkpoint).unwrap(),
            fs::read(out.run_dir.join("curve.csv")).unwrap(),
            report.to_csv(),
            out.run_dir.file_name().unwrap().to_owned(),
        )
    };
    assert_eq!(run("first"), run("second"));
}

#[test]
fn training_lowers_the_training_split_score() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    dataset(&data);
    let before = train(&TrainConfig::new(&data, tmp.path().join("a"), Variant::D, 0, 1)).unwrap();
    // enough steps for the running batchnorm statistics to settle
    let after = train(&TrainConfig::new(&data, tmp.path().join("b"), Variant::D, 40, 1)).unwrap();
    let r0 = evaluate(&before.best_checkpoint, &data, Split::Train).unwrap();
    let r1 = evaluate(&after.last_checkpoint, &data, Split::Train).unwrap();
    assert!(r1.mean_pc < r0.mean_pc, "{} -> {}", r0.mean_pc, r1.mean_pc);
    assert!(r1.rows.iter().all(|r| r.cd_partial > 0.0));
    let curve = &after.curve;
    assert!(curve.last().unwrap().train_loss < curve[0].train_loss);
}

#[test]
fn report_means_recompute_from_saved_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    dataset(&data);
    let out = train(&TrainConfig::new(&data, tmp.path().join("r"), Variant::C, 1, 2)).unwrap();
    let report = evaluate(&out.best_checkpoint, &data, Split::HoldoutModels).unwrap();
    let path = tmp.path().join("report.csv");
    report.write_csv(&path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    let (rows, means) = EvalReport::parse_csv(&text).unwrap();
    let n = rows.len() as f64;
    let recomputed = rows.iter().map(|r| r.cd_pc).sum::<f64>() / n;
    assert!((recomputed - report.mean_pc).abs() <= 1e-9);
    assert!((means.unwrap()[0] - recomputed).abs() <= 1e-9);
    assert_eq!(rows, report.rows);
}

#[test]
fn training_leaves_the_dataset_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    dataset(&data);
    let snapshot = || {
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(data.join("samples"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .chain([data.join("manifest.json")])
            .map(|p| (p.display().to_string(), fs::read(&p).unwrap()))
            .collect();
        files.sort();
        files
    };
    let before = snapshot();
    let out = train(&TrainConfig::new(&data, tmp.path().join("runs"), Variant::A, 1, 0)).unwrap();
    assert_eq!(before, snapshot());
    assert!(out.run_dir.starts_with(tmp.path().join("runs")));
    for f in ["config.json", "curve.csv", "best.ckpt", "last.ckpt"] {
        assert!(out.run_dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn missing_dataset_and_mismatched_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let err = train(&TrainConfig::new(tmp.path().join("nope"), tmp.path(), Variant::D, 1, 0)).unwrap_err();
    assert!(matches!(err, HarnessError::DatasetMissing(_)), "{err}");
    assert_eq!(err.class(), "DatasetMissing");

    let data = tmp.path().join("data");
    dataset(&data);
    let mut cfg = TrainConfig::new(&data, tmp.path().join("r"), Variant::D, 1, 0);
    cfg.model = ModelConfig::toy();
    let err = train(&cfg).unwrap_err();
    assert_eq!(err.class(), "ConfigMismatch");

    let mut cfg = TrainConfig::new(&data, tmp.path().join("r"), Variant::D, 1, 0);
    cfg.norm_mode = Some(NormMode::Baseline);
    assert_eq!(train(&cfg).unwrap_err().class(), "ConfigMismatch");
}

#[test]
fn exploding_updates_abort_as_diverged() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    dataset(&data);
    let mut cfg = TrainConfig::new(&data, tmp.path().join("r"), Variant::D, 3, 0);
    cfg.learning_rate = 1e30;
    let err = train(&cfg).unwrap_err();
    assert_eq!(err.class(), "DivergedLoss", "{err}");
}

#[test]
fn dataset_reports_its_splits() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path());
    let ds = Dataset::open(tmp.path()).unwrap();
    for split in Split::ALL {
        assert!(ds.records(split).count() > 0, "{}", split.name());
    }
}
