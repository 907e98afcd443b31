//! End-to-end checks of the command-line pipeline: file formats, exit codes,
//! determinism, seed precedence, and checkpoint resume.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stradiff"));
    c.env_remove("STRADIFF_SEED");
    c
}

fn tempdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("stradiff-pipeline").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed ({:?}):\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process terminated by signal")
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

const TINY: &[&str] =
    &["--t_len", "48", "--hidden", "8", "--l", "3", "--epochs", "6", "--snapshot_epochs", "0"];

fn generate(dir: &Path, extra: &[&str]) {
    let out = bin().arg("generate").arg("--outdir").arg(dir).args(extra).output().unwrap();
    ok(&out);
}

fn train(dir: &Path, extra: &[&str]) -> Output {
    bin().arg("train").arg("--outdir").arg(dir).args(TINY).args(extra).output().unwrap()
}

#[test]
fn generate_writes_expected_shapes_and_is_idempotent() {
    let dir = tempdir("gen");
    generate(&dir, &["--t_len", "10"]);
    let sources = lines(&dir.join("sources.csv"));
    assert_eq!(sources.len(), 11, "header + 10 rows");
    assert_eq!(sources[0], "t,s1,s2,s3");
    assert_eq!(sources[1].split(',').count(), 4);
    let mixing = lines(&dir.join("mixing.csv"));
    assert_eq!(mixing.len(), 4, "header + 3 channel rows");

    let first = fs::read(dir.join("mixture.csv")).unwrap();
    generate(&dir, &["--t_len", "10"]);
    assert_eq!(first, fs::read(dir.join("mixture.csv")).unwrap(), "same seed, same bytes");

    generate(&dir, &["--t_len", "10", "--seed", "1"]);
    assert_ne!(first, fs::read(dir.join("mixture.csv")).unwrap(), "new seed, new data");
}

#[test]
fn nonlinear_generate_emits_second_map() {
    let dir = tempdir("gen-nonlinear");
    generate(&dir, &["--t_len", "10", "--mixing", "nonlinear"]);
    assert!(dir.join("mixing_b.csv").exists());
}

#[test]
fn env_seed_overrides_cli_seed() {
    let dir_a = tempdir("seed-env");
    let out = bin()
        .arg("generate")
        .arg("--outdir")
        .arg(&dir_a)
        .args(["--t_len", "10", "--seed", "1"])
        .env("STRADIFF_SEED", "2")
        .output()
        .unwrap();
    ok(&out);
    let dir_b = tempdir("seed-cli");
    generate(&dir_b, &["--t_len", "10", "--seed", "2"]);
    assert_eq!(
        fs::read(dir_a.join("mixture.csv")).unwrap(),
        fs::read(dir_b.join("mixture.csv")).unwrap()
    );

    let bad = bin()
        .arg("generate")
        .arg("--outdir")
        .arg(&dir_a)
        .env("STRADIFF_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(code(&bad), 1);
}

#[test]
fn usage_and_config_errors_exit_one() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(code(&out), 1);

    let out = bin().args(["generate", "--no_such_flag", "3"]).output().unwrap();
    assert_eq!(code(&out), 1);

    let out = bin().args(["generate", "--t_len", "zebra"]).output().unwrap();
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("t_len"));

    let dir = tempdir("badcfg");
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, "[experiment]\nt_len = -4\n").unwrap();
    let out = bin().arg("generate").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(code(&out), 1);

    let out = bin().arg("--help").output().unwrap();
    assert_eq!(code(&out), 0);
}

#[test]
fn missing_or_mismatched_data_exits_two() {
    let dir = tempdir("nodata");
    let out = train(&dir, &[]);
    assert_eq!(code(&out), 2, "missing mixture.csv is a data error");

    generate(&dir, &["--t_len", "48"]);
    let out = bin()
        .arg("train")
        .arg("--outdir")
        .arg(&dir)
        .args(["--t_len", "64", "--hidden", "8", "--l", "3", "--epochs", "2"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "shape mismatch between file and config is a data error");
    assert!(String::from_utf8_lossy(&out.stderr).contains("mixture"));

    let out = bin().arg("estimate").arg("--outdir").arg(&dir).output().unwrap();
    assert_eq!(code(&out), 2, "missing checkpoint is a data error");
}

#[test]
fn config_file_plus_cli_precedence_reaches_training() {
    let dir = tempdir("precedence");
    generate(&dir, &["--t_len", "48"]);
    let cfg = dir.join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "[experiment]\nt_len = 48\n[diffusion]\nhidden = 8\nl = 3\n[train]\nepochs = 9\nsnapshot_epochs =\n[io]\noutdir = {}\n",
            dir.display()
        ),
    )
    .unwrap();
    // CLI epochs beats the file's 9.
    let out = bin().arg("train").arg("--config").arg(&cfg).args(["--epochs", "2"]).output().unwrap();
    ok(&out);
    let report = lines(&dir.join("report.csv"));
    assert_eq!(report.len(), 3, "header + 2 epochs");
    assert!(report[0].starts_with("epoch,rec,prior,diff,kl,total,corr1"));
    assert!(report[1].starts_with("0,"));
}

#[test]
fn train_writes_report_checkpoint_and_snapshots() {
    let dir = tempdir("train");
    generate(&dir, &["--t_len", "48"]);
    let out = train(&dir, &[]);
    ok(&out);

    let report = lines(&dir.join("report.csv"));
    assert_eq!(report.len(), 7, "header + 6 epochs");
    // Snapshot files: epoch 0 (requested) and epoch 6 (final), one per source.
    for epoch in [0, 6] {
        for branch in 0..3 {
            let p = dir.join(format!("paths_epoch{epoch}_branch{branch}.csv"));
            let rows = lines(&p);
            assert_eq!(rows.len(), 5, "{p:?}: header + L+1 states");
            assert!(rows[1].starts_with("3,"), "first state at tau = L");
            assert!(rows[4].starts_with("0,"), "last state at tau = 0");
        }
    }
    assert!(dir.join("checkpoint.bin").exists());

    // Ground truth present, so correlations are real numbers, not NaN.
    let last = report.last().unwrap();
    assert!(!last.contains("NaN"));
}

#[test]
fn truthless_training_reports_nan_correlations() {
    let dir = tempdir("truthless");
    generate(&dir, &["--t_len", "48"]);
    fs::remove_file(dir.join("sources.csv")).unwrap();
    let out = train(&dir, &[]);
    ok(&out);
    let report = lines(&dir.join("report.csv"));
    assert!(report[1].contains("NaN"));
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir_a = tempdir("det-a");
    generate(&dir_a, &["--t_len", "48"]);
    ok(&train(&dir_a, &[]));
    let dir_b = tempdir("det-b");
    generate(&dir_b, &["--t_len", "48"]);
    ok(&train(&dir_b, &[]));

    let report_a = fs::read(dir_a.join("report.csv")).unwrap();
    let report_b = fs::read(dir_b.join("report.csv")).unwrap();
    assert_eq!(report_a, report_b, "reports must be byte-identical");

    // Checkpoints differ only in the io paths inside the config echo, so
    // compare them through the loaded tensors instead of raw bytes.
    let ck_a = stradiff::checkpoint::load_checkpoint(&dir_a.join("checkpoint.bin")).unwrap();
    let ck_b = stradiff::checkpoint::load_checkpoint(&dir_b.join("checkpoint.bin")).unwrap();
    assert_eq!(ck_a.epoch, ck_b.epoch);
    assert_eq!(ck_a.rng, ck_b.rng);
    assert_eq!(ck_a.tensors.len(), ck_b.tensors.len());
    for ((na, ta), (nb, tb)) in ck_a.tensors.iter().zip(ck_b.tensors.iter()) {
        assert_eq!(na, nb);
        let bits_a: Vec<u64> = ta.data.iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = tb.data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b, "tensor {na}");
    }
}

#[test]
fn resume_matches_uninterrupted_run() {
    // Reference: one 6-epoch run.
    let full = tempdir("resume-full");
    generate(&full, &["--t_len", "48"]);
    ok(&train(&full, &[]));

    // Interrupted: 3 epochs, then resume to 6.
    let half = tempdir("resume-half");
    generate(&half, &["--t_len", "48"]);
    let out = bin()
        .arg("train")
        .arg("--outdir")
        .arg(&half)
        .args(["--t_len", "48", "--hidden", "8", "--l", "3", "--epochs", "3", "--snapshot_epochs", "0"])
        .output()
        .unwrap();
    ok(&out);
    let out = bin()
        .arg("train")
        .arg("--resume")
        .arg(half.join("checkpoint.bin"))
        .args(["--epochs", "6"])
        .output()
        .unwrap();
    ok(&out);

    let ck_full = stradiff::checkpoint::load_checkpoint(&full.join("checkpoint.bin")).unwrap();
    let ck_res = stradiff::checkpoint::load_checkpoint(&half.join("checkpoint.bin")).unwrap();
    assert_eq!(ck_full.epoch, ck_res.epoch);
    assert_eq!(ck_full.rng, ck_res.rng, "rng state must land on the same position");
    for ((na, ta), (nb, tb)) in ck_full.tensors.iter().zip(ck_res.tensors.iter()) {
        assert_eq!(na, nb);
        let bits_a: Vec<u64> = ta.data.iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = tb.data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b, "tensor {na}");
    }

    // The resumed report covers epochs 3..6 and matches the tail of the
    // uninterrupted run line for line.
    let tail = lines(&half.join("report.csv"));
    let full_report = lines(&full.join("report.csv"));
    assert_eq!(tail.len(), 4, "header + epochs 3..6");
    assert_eq!(tail[1..], full_report[4..], "resumed rows equal the reference tail");

    // Changing a model-shape key on resume is rejected.
    let out = bin()
        .arg("train")
        .arg("--resume")
        .arg(half.join("checkpoint.bin"))
        .args(["--epochs", "8", "--hidden", "16"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("hidden"));
}

#[test]
fn estimate_emits_bands_matching_and_reconstruction() {
    let dir = tempdir("estimate");
    generate(&dir, &["--t_len", "48"]);
    ok(&train(&dir, &[]));
    let out = bin().arg("estimate").arg("--outdir").arg(&dir).args(["--draws", "3"]).output().unwrap();
    ok(&out);

    let est = lines(&dir.join("estimate.csv"));
    assert_eq!(est.len(), 49);
    let header: Vec<&str> = est[0].split(',').collect();
    assert_eq!(header[0], "t");
    assert!(header.contains(&"mean1") && header.contains(&"std3") && header.contains(&"truth3"));
    for field in est[1].split(',') {
        let v: f64 = field.parse().unwrap();
        assert!(v.is_finite());
    }

    let ms = lines(&dir.join("match_summary.csv"));
    assert_eq!(ms.len(), 4);
    assert_eq!(ms[0], "truth,est,sign,corr,zero_variance,mean_corr");

    let recon = lines(&dir.join("reconstruction.csv"));
    assert_eq!(recon.len(), 49);
    assert_eq!(recon[0], "t,y1,y2,y3");

    // Without ground truth, the estimate is still written and the match
    // summary is omitted.
    fs::remove_file(dir.join("sources.csv")).unwrap();
    fs::remove_file(dir.join("match_summary.csv")).unwrap();
    let out = bin().arg("estimate").arg("--outdir").arg(&dir).args(["--draws", "2"]).output().unwrap();
    ok(&out);
    assert!(dir.join("estimate.csv").exists());
    assert!(!dir.join("match_summary.csv").exists());
    let est = lines(&dir.join("estimate.csv"));
    assert!(!est[0].contains("truth"));
}

#[test]
fn corrupted_checkpoint_version_is_a_data_error() {
    let dir = tempdir("badckpt");
    generate(&dir, &["--t_len", "48"]);
    ok(&train(&dir, &[]));
    let ck = dir.join("checkpoint.bin");
    let mut bytes = fs::read(&ck).unwrap();
    bytes[20] = b'9'; // clobber the version line
    fs::write(&ck, &bytes).unwrap();
    let out = bin().arg("estimate").arg("--outdir").arg(&dir).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}

#[test]
fn selfcheck_prints_four_verdicts() {
    let out = bin().arg("selfcheck").output().unwrap();
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let verdicts: Vec<&str> = stdout.lines().filter(|l| l.starts_with("suite ")).collect();
    assert_eq!(verdicts.len(), 4, "{stdout}");
    for v in verdicts {
        assert!(v.contains("PASS"), "{v}");
    }
}
