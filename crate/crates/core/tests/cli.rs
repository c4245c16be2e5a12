use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use oa_complete::data::{read_cloud, write_cloud};
use oa_complete::PointCloud;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_oa-complete"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs a failing command and returns the class from its one error line.
fn error_class(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} should fail");
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().unwrap();
    assert!(line.starts_with("error["), "{stderr}");
    line["error[".len()..line.find(']').unwrap()].to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn find_file(dir: &Path, name: &str) -> PathBuf {
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            let c = p.join(name);
            if c.is_file() {
                return c;
            }
        }
    }
    panic!("no {name} under {}", dir.display());
}

fn blob(n: usize) -> PointCloud {
    (0..n)
        .map(|i| {
            let t = i as f32 * 0.37;
            [3.0 + 0.1 * t.sin(), -1.0 + 0.1 * t.cos(), 0.5 + 0.05 * (t * 0.7).sin()]
        })
        .collect()
}

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let runs = tmp.path().join("runs");
    let stdout = ok(&["gen-data", "--out", s(&data), "--shapes", "6", "--views", "2", "--seed", "1"]);
    assert!(stdout.contains("holdout-views"));
    ok(&["train", "--data", s(&data), "--out", s(&runs), "--variant", "D", "--epochs", "1", "--seed", "0"]);
    let ckpt = find_file(&runs, "best.ckpt");

    let report = tmp.path().join("report.csv");
    ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--split", "holdout-views", "--out", s(&report)]);
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("id,cd_pc_x1000"));
    assert!(csv.lines().last().unwrap().starts_with("mean,"));

    let input = tmp.path().join("in.xyz");
    write_cloud(&input, &blob(300)).unwrap();
    let out1 = tmp.path().join("out1.pcdc");
    let out2 = tmp.path().join("out2.pcdc");
    ok(&["complete", "--ckpt", s(&ckpt), "--in", s(&input), "--out", s(&out1)]);
    ok(&["complete", "--ckpt", s(&ckpt), "--in", s(&input), "--out", s(&out2)]);
    assert_eq!(fs::read(&out1).unwrap(), fs::read(&out2).unwrap());
    let done = read_cloud(&out1).unwrap();
    let m = oa_complete::harness::load_checkpoint(&ckpt).unwrap();
    assert_eq!(done.len(), m.meta.model.completed_count());

    // error classes
    let bad = tmp.path().join("bad.pcdc");
    fs::write(&bad, b"NOPE0000000000").unwrap();
    assert_eq!(error_class(&["complete", "--ckpt", s(&ckpt), "--in", s(&bad), "--out", s(&out1)]), "BadMagic");
    let empty = tmp.path().join("empty.pcdc");
    fs::write(&empty, b"").unwrap();
    assert_eq!(
        error_class(&["complete", "--ckpt", s(&ckpt), "--in", s(&empty), "--out", s(&out1)]),
        "TruncatedFile"
    );
    let broken = tmp.path().join("broken.xyz");
    fs::write(&broken, "0 0 0\n1 1 1\n1 x 1\n").unwrap();
    assert_eq!(
        error_class(&["complete", "--ckpt", s(&ckpt), "--in", s(&broken), "--out", s(&out1)]),
        "ParseError"
    );
    let small = tmp.path().join("small.xyz");
    write_cloud(&small, &blob(10)).unwrap();
    assert_eq!(
        error_class(&["complete", "--ckpt", s(&ckpt), "--in", s(&small), "--out", s(&out1)]),
        "TooFewPoints"
    );
    assert_eq!(
        error_class(&["complete", "--ckpt", s(&bad), "--in", s(&input), "--out", s(&out1)]),
        "BadMagic"
    );
    assert_eq!(
        error_class(&["eval", "--ckpt", s(&ckpt), "--data", s(&tmp.path().join("none")), "--split", "train", "--out", s(&report)]),
        "DatasetMissing"
    );
}

#[test]
fn argument_errors_are_one_line() {
    assert_eq!(error_class(&["train", "--data", "x"]), "InvalidArgs");
    assert_eq!(error_class(&["frobnicate"]), "InvalidArgs");
    let out = run(&["train", "--data", "d", "--out", "o", "--variant", "Z", "--epochs", "1", "--seed", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(String::from_utf8(out.stderr).unwrap().lines().count(), 1);
    assert_eq!(error_class(&["gradcheck", "--op", "nope"]), "InvalidArgs");
    assert!(ok(&["--help"]).contains("gen-data"));
}

#[test]
fn missing_dataset_for_training() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("x");
    let args = ["train", "--data", s(&missing), "--out", s(tmp.path()), "--variant", "A", "--epochs", "1", "--seed", "0"];
    assert_eq!(error_class(&args), "DatasetMissing");
    let ablate = ["ablate", "--data", s(tmp.path()), "--out", s(tmp.path()), "--seeds", "1"];
    assert_eq!(error_class(&ablate), "DatasetMissing");
}

#[test]
fn gradcheck_single_op() {
    let stdout = ok(&["gradcheck", "--op", "chamfer", "--trials", "3"]);
    assert!(stdout.contains("chamfer") && stdout.contains("PASS"), "{stdout}");
}
