//! Behavior tests for the `thanos` binary: exit codes, smoke runs, and the
//! report/verify commands driven end to end.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_thanos"))
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("thns-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn gen_small(dir: &Path) {
    let status = bin()
        .args([
            "gen",
            "--blocks",
            "2",
            "--layers",
            "2",
            "--dims",
            "12",
            "--samples",
            "3",
            "--seed",
            "5",
            "--out",
        ])
        .arg(dir)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn missing_model_flag_is_usage_error() {
    let out = bin()
        .args([
            "prune",
            "--calib",
            "c.thns",
            "--method",
            "thanos",
            "--sparsity",
            "0.5",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn unknown_flag_prints_usage_to_stderr() {
    let out = bin().args(["prune", "--frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--frobnicate") || stderr.to_lowercase().contains("usage"));
}

#[test]
fn help_exits_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn bad_sparsity_is_usage_error() {
    let out = bin()
        .args([
            "prune",
            "--model",
            "m.json",
            "--calib",
            "c.thns",
            "--method",
            "thanos",
            "--sparsity",
            "1.5",
            "--out",
            "o",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn alpha_on_magnitude_is_usage_error() {
    let out = bin()
        .args([
            "prune",
            "--model",
            "m.json",
            "--calib",
            "c.thns",
            "--method",
            "magnitude",
            "--sparsity",
            "0.5",
            "--alpha",
            "0.1",
            "--out",
            "o",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_model_file_is_data_error() {
    let dir = tmpdir("nodata");
    let out = bin()
        .args(["prune", "--model"])
        .arg(dir.join("nope.json"))
        .args(["--calib"])
        .arg(dir.join("nope.thns"))
        .args(["--method", "thanos", "--sparsity", "0.5", "--out"])
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_tensor_is_data_error() {
    let dir = tmpdir("corrupt");
    gen_small(&dir);
    std::fs::write(dir.join("calib.thns"), b"NOTATENSOR").unwrap();
    let out = bin()
        .args(["prune", "--model"])
        .arg(dir.join("model.json"))
        .args(["--calib"])
        .arg(dir.join("calib.thns"))
        .args(["--method", "wanda", "--sparsity", "0.5", "--out"])
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rank_deficient_calibration_without_damping_is_numerical_error() {
    let dir = tmpdir("numfail");
    gen_small(&dir);
    // all-zero calibration tensor of the right shape: Hessian is singular
    // and --damp 0 forbids rescue
    let zeros = vec![
        thanos_core::DenseMatrix::zeros(12, 12),
        thanos_core::DenseMatrix::zeros(12, 12),
    ];
    thanos_cli::tensor::save_tensor(
        &dir.join("zero_calib.thns"),
        &thanos_cli::tensor::TensorData::from_samples(&zeros, thanos_cli::tensor::Dtype::F64),
    )
    .unwrap();
    let out = bin()
        .args(["prune", "--model"])
        .arg(dir.join("model.json"))
        .args(["--calib"])
        .arg(dir.join("zero_calib.thns"))
        .args([
            "--method",
            "thanos",
            "--sparsity",
            "0.5",
            "--damp",
            "0",
            "--out",
        ])
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn smoke_prune_writes_report_and_verify_passes() {
    let dir = tmpdir("smoke");
    gen_small(&dir);
    let out_dir = dir.join("out");
    let status = bin()
        .args(["prune", "--model"])
        .arg(dir.join("model.json"))
        .args(["--calib"])
        .arg(dir.join("calib.thns"))
        .args([
            "--method",
            "thanos",
            "--sparsity",
            "0.5",
            "--blocksize",
            "128",
            "--out",
        ])
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out_dir.join("report.json").is_file());
    assert!(out_dir.join("model.json").is_file());

    let status = bin()
        .args(["verify", "--model"])
        .arg(dir.join("model.json"))
        .args(["--pruned"])
        .arg(out_dir.join("model.json"))
        .args(["--calib"])
        .arg(dir.join("calib.thns"))
        .args(["--report"])
        .arg(out_dir.join("report.json"))
        .status()
        .unwrap();
    assert!(status.success());

    // report pretty-printer and CSV flattening both run
    let out = bin()
        .args(["report", "--report"])
        .arg(out_dir.join("report.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("totals:"));

    let out = bin()
        .args(["report", "--csv", "--report"])
        .arg(out_dir.join("report.json"))
        .output()
        .unwrap();
    let csv = String::from_utf8_lossy(&out.stdout);
    assert_eq!(csv.lines().count(), 5); // header + 4 layers
}

#[test]
fn nm_with_alpha_reports_reduced_sparsity() {
    let dir = tmpdir("nmalpha");
    // dims 20 -> ceil(0.1*20) = 2 outlier rows per layer
    let status = bin()
        .args([
            "gen",
            "--blocks",
            "1",
            "--layers",
            "1",
            "--dims",
            "20",
            "--samples",
            "3",
            "--seed",
            "9",
            "--out",
        ])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    let out_dir = dir.join("out");
    let status = bin()
        .args(["prune", "--model"])
        .arg(dir.join("model.json"))
        .args(["--calib"])
        .arg(dir.join("calib.thns"))
        .args([
            "--method",
            "thanos",
            "--pattern",
            "2:4",
            "--alpha",
            "0.1",
            "--out",
        ])
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let report = thanos_cli::report::Report::load(&out_dir.join("report.json")).unwrap();
    // 18 of 20 rows pruned at half density: 0.5 * 0.9 = 0.45
    assert!((report.totals.global_sparsity - 0.45).abs() < 1e-12);
}

#[test]
fn thread_cap_does_not_change_output_bytes() {
    let dir = tmpdir("threads");
    gen_small(&dir);
    let mut outputs = Vec::new();
    for (tag, threads) in [("t1", "1"), ("t4", "4")] {
        let out_dir = dir.join(tag);
        let status = bin()
            .env("THANOS_THREADS", threads)
            .args(["prune", "--model"])
            .arg(dir.join("model.json"))
            .args(["--calib"])
            .arg(dir.join("calib.thns"))
            .args([
                "--method",
                "thanos",
                "--sparsity",
                "0.5",
                "--row-chunk",
                "4",
                "--out",
            ])
            .arg(&out_dir)
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(out_dir.join("layer_0_0.thns")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "results depend on thread count");
}

#[test]
fn verify_fails_on_tampered_output() {
    let dir = tmpdir("tamper");
    gen_small(&dir);
    let out_dir = dir.join("out");
    let status = bin()
        .args(["prune", "--model"])
        .arg(dir.join("model.json"))
        .args(["--calib"])
        .arg(dir.join("calib.thns"))
        .args(["--method", "magnitude", "--sparsity", "0.5", "--out"])
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());

    // flip one weight in the pruned output
    let t = thanos_cli::tensor::load_tensor(&out_dir.join("layer_0_0.thns")).unwrap();
    let mut tampered = t.clone();
    tampered.values[0] += 1.0;
    thanos_cli::tensor::save_tensor(&out_dir.join("layer_0_0.thns"), &tampered).unwrap();

    let out = bin()
        .args(["verify", "--model"])
        .arg(dir.join("model.json"))
        .args(["--pruned"])
        .arg(out_dir.join("model.json"))
        .args(["--calib"])
        .arg(dir.join("calib.thns"))
        .args(["--report"])
        .arg(out_dir.join("report.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
