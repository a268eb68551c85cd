use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use stochres_core::data::{encode_images, encode_labels};
use stochres_core::report::{read_manifest, read_sweep_csv};
use stochres_core::ImageSet;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_stochres"));
    cmd.env_remove("STOCHRES_DATA_DIR").env("RUST_LOG", "warn");
    cmd
}

/// Ten blocky "digits", one per class, with per-image jitter.
fn write_fixture(dir: &Path, count: usize, prefix: &str) {
    let mut pixels = vec![0.0f32; count * 784];
    let labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
    for (i, &l) in labels.iter().enumerate() {
        let row = 2 + 2 * usize::from(l);
        for r in row..row + 6 {
            for c in 4 + i % 3..20 + i % 3 {
                pixels[i * 784 + r * 28 + c] = 0.6 + 0.4 * ((r * c + i) % 5) as f32 / 4.0;
            }
        }
    }
    let set = ImageSet {
        count,
        rows: 28,
        cols: 28,
        pixels,
    };
    fs::write(
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        encode_images(&set),
    )
    .unwrap();
    fs::write(
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
        encode_labels(&labels),
    )
    .unwrap();
}

fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 120, "train");
    write_fixture(dir.path(), 40, "t10k");
    dir
}

fn small_run(data: &Path, out: &Path, models: &Path, args: &[&str]) -> Output {
    let mut cmd = bin();
    cmd.args(args).args([
        "--data-dir",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--model-dir",
        models.to_str().unwrap(),
        "--epochs",
        "1",
        "--batch-size",
        "16",
        "--empty-train",
        "12",
        "--empty-val",
        "8",
        "--seed",
        "5",
    ]);
    cmd.output().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const GRID: [&str; 4] = ["--t-factors", "1.0,0.2", "--noise-levels", "0,0.05,0.1"];

#[test]
fn sweep_csv_is_identical_across_runs_and_thread_counts() {
    let data = fixture();
    let work = tempfile::tempdir().unwrap();
    let models = work.path().join("models");
    let mut csvs = Vec::new();
    for (run, jobs) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let out = work.path().join(run);
        let mut args = vec!["sweep", "--jobs", jobs];
        args.extend(GRID);
        assert_ok(&small_run(data.path(), &out, &models, &args));
        csvs.push(fs::read(out.join("sweep_uniform.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(csvs[0], csvs[2]);

    let records = read_sweep_csv(&work.path().join("a/sweep_uniform.csv")).unwrap();
    assert_eq!(records.len(), 6);
    assert!(records
        .iter()
        .all(|r| r.n_models == 5 && r.mean_detection.is_some()));
    assert!(records.iter().all(|r| (0.0..=1.0).contains(&r.mean_acc)));
}

#[test]
fn retraining_reproduces_the_cached_models() {
    let data = fixture();
    let work = tempfile::tempdir().unwrap();
    let models = work.path().join("models");
    let mut args = vec!["sweep", "--noise", "gaussian"];
    args.extend(GRID);
    assert_ok(&small_run(
        data.path(),
        &work.path().join("a"),
        &models,
        &args,
    ));
    args.push("--retrain");
    assert_ok(&small_run(
        data.path(),
        &work.path().join("b"),
        &models,
        &args,
    ));
    assert_eq!(
        fs::read(work.path().join("a/sweep_gaussian.csv")).unwrap(),
        fs::read(work.path().join("b/sweep_gaussian.csv")).unwrap()
    );
}

#[test]
fn ablation_has_no_detection_column() {
    let data = fixture();
    let work = tempfile::tempdir().unwrap();
    let mut args = vec!["ablation"];
    args.extend(GRID);
    assert_ok(&small_run(
        data.path(),
        work.path(),
        &work.path().join("m"),
        &args,
    ));
    let records = read_sweep_csv(&work.path().join("ablation_uniform.csv")).unwrap();
    assert_eq!(records.len(), 6);
    assert!(records.iter().all(|r| r.mean_detection.is_none()));
}

#[test]
fn seqlen_writes_one_row_per_length_and_provenance() {
    let data = fixture();
    let work = tempfile::tempdir().unwrap();
    let args = ["seqlen", "--lengths", "1,2"];
    assert_ok(&small_run(
        data.path(),
        work.path(),
        &work.path().join("m"),
        &args,
    ));
    let records = read_sweep_csv(&work.path().join("seqlen.csv")).unwrap();
    let lengths: Vec<usize> = records.iter().map(|r| r.seq_len).collect();
    assert_eq!(lengths, vec![1, 2]);

    let prov: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(work.path().join("seqlen.run.json")).unwrap())
            .unwrap();
    assert_eq!(prov["seed"], 5);
    assert_eq!(prov["command"], "seqlen");
    assert_eq!(prov["settings"]["epochs"], 1);
}

#[test]
fn examples_writes_pgm_triplets() {
    let data = fixture();
    let work = tempfile::tempdir().unwrap();
    let args = ["examples", "--count", "3"];
    assert_ok(&small_run(
        data.path(),
        work.path(),
        &work.path().join("m"),
        &args,
    ));
    let rows = read_manifest(&work.path().join("examples/manifest.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    for (_, _, _, files) in rows {
        for f in files {
            assert!(
                fs::read(&f).unwrap().starts_with(b"P5\n28 28\n255\n"),
                "{}",
                f.display()
            );
        }
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let data = fixture();
    let work = tempfile::tempdir().unwrap();
    let config = work.path().join("run.toml");
    fs::write(
        &config,
        "t_factors = [0.3]\nnoise_levels = [0.0, 0.02]\nseed = 9\n",
    )
    .unwrap();
    let out = small_run(
        data.path(),
        work.path(),
        &work.path().join("m"),
        &["sweep", "--config", config.to_str().unwrap()],
    );
    assert_ok(&out);
    let records = read_sweep_csv(&work.path().join("sweep_uniform.csv")).unwrap();
    assert_eq!(records.len(), 2);
    assert!(records.iter().all(|r| (r.t_factor - 0.3).abs() < 1e-6));
    // --seed 5 on the command line overrides seed = 9
    let prov = fs::read_to_string(work.path().join("sweep_uniform.run.json")).unwrap();
    assert!(prov.contains("\"seed\": 5"), "{prov}");
}

#[test]
fn bad_config_key_is_a_usage_error() {
    let work = tempfile::tempdir().unwrap();
    let config = work.path().join("bad.toml");
    fs::write(&config, "epochz = 3\n").unwrap();
    let out = bin()
        .args(["sweep", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_file_is_named_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 10, "train");
    let out = bin()
        .args(["train", "--data-dir", dir.path().to_str().unwrap(), "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("t10k-images-idx3-ubyte"), "{stderr}");
}

#[test]
fn data_dir_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("STOCHRES_DATA_DIR", dir.path())
        .args(["train", "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(&*dir.path().to_string_lossy()), "{stderr}");
}

#[test]
fn unknown_flag_exits_2() {
    let out = bin().args(["sweep", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_noise_kind_exits_2() {
    let out = bin().args(["sweep", "--noise", "pink"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_epochs_is_a_usage_error() {
    let data = fixture();
    let work = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["train", "--epochs", "0", "--data-dir"])
        .arg(data.path())
        .arg("--out")
        .arg(work.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn every_subcommand_has_help() {
    for sub in [
        "train",
        "sweep",
        "ablation",
        "seqlen",
        "examples",
        "gradcheck",
    ] {
        let out = bin().args([sub, "--help"]).output().unwrap();
        assert!(out.status.success(), "{sub}");
        assert!(
            String::from_utf8_lossy(&out.stdout).contains("Usage"),
            "{sub}"
        );
    }
}

#[test]
fn gradcheck_passes() {
    let out = bin().arg("gradcheck").output().unwrap();
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("max relative error").count(), 4);
}

#[test]
fn gradcheck_fails_with_an_impossible_tolerance() {
    let out = bin()
        .args(["gradcheck", "--tolerance", "0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
