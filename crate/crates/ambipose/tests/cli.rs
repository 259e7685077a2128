use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ambipose::checkpoint::{self, Checkpoint};
use ambipose_core::model::{Architecture, RegressorMode};
use ambipose_core::{PoseRegressor, SceneSpec};

fn ambipose(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ambipose"))
        .args(args)
        .env("AMBIPOSE_OUT_DIR", dir)
        .env("AMBIPOSE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ambipose(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    ambipose(dir, args).status.code().unwrap()
}

#[test]
fn every_subcommand_documents_its_flags() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, flag) in [
        ("gen", "--scene"),
        ("train", "--alpha"),
        ("eval", "--gamma"),
        ("viz", "--bins"),
        ("bench", "--repeats"),
        ("sweep-alpha", "--alphas"),
    ] {
        let help = ok(dir.path(), &[cmd, "--help"]);
        assert!(help.contains(flag), "{cmd} help lacks {flag}");
        assert!(help.contains("default"), "{cmd} help lacks defaults");
    }
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &["gen", "--scene", "no_such_scene"]), 1);
    assert_eq!(code(d, &["gen", "--bogus-flag"]), 1);
    assert_eq!(code(d, &["train", "--dataset", "missing_dir"]), 1);
    ok(
        d,
        &[
            "gen",
            "--scene",
            "dinner_table",
            "--train",
            "4",
            "--test",
            "2",
            "--out",
            d.join("data").to_str().unwrap(),
        ],
    );
    let data = d.join("data");
    let data = data.to_str().unwrap();
    assert_eq!(code(d, &["train", "--dataset", data, "--alpha", "0"]), 1);
    let stderr =
        String::from_utf8(ambipose(d, &["train", "--dataset", data, "--alpha", "2", "--batch-size", "0"]).stderr)
            .unwrap();
    assert!(stderr.contains("alpha") && stderr.contains("batch_size"), "{stderr}");
}

#[test]
fn mismatched_checkpoint_names_both_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "gen",
            "--scene",
            "round_table",
            "--train",
            "4",
            "--test",
            "2",
            "--out",
            d.join("data").to_str().unwrap(),
        ],
    );
    let spec = SceneSpec::builtin("round_table").unwrap();
    let arch = Architecture {
        obs_dim: 10,
        ..Architecture::default()
    };
    let model = PoseRegressor::new(&arch, spec.bounds, RegressorMode::Variational, 0).unwrap();
    let ckpt = d.join("small.ckpt");
    checkpoint::save(
        &ckpt,
        &Checkpoint {
            scene: spec.name,
            model,
            state: None,
        },
    )
    .unwrap();
    let out = ambipose(
        d,
        &[
            "eval",
            "--dataset",
            d.join("data").to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
        ],
    );
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(out.status.code(), Some(1), "{stderr}");
    assert!(stderr.contains("64") && stderr.contains("10"), "{stderr}");
}

#[test]
fn bench_prints_two_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "gen",
            "--scene",
            "round_table",
            "--train",
            "4",
            "--test",
            "2",
            "--out",
            d.join("data").to_str().unwrap(),
        ],
    );
    ok(
        d,
        &[
            "train",
            "--dataset",
            d.join("data").to_str().unwrap(),
            "--epochs",
            "1",
            "--mc-samples",
            "5",
            "--log-every",
            "0",
        ],
    );
    let line = ok(
        d,
        &[
            "bench",
            "--checkpoint",
            d.join("model.ckpt").to_str().unwrap(),
            "--repeats",
            "3",
            "--mc-samples",
            "50",
        ],
    );
    let parts: Vec<&str> = line.trim().trim_end_matches(" ms").split(" ± ").collect();
    assert_eq!(parts.len(), 2, "{line}");
    assert!(parts.iter().all(|p| p.parse::<f64>().unwrap() >= 0.0));
}

/// Runs the whole pipeline in `dir` and returns every file it wrote.
fn pipeline(dir: &Path, threads: &str) -> Vec<(String, Vec<u8>)> {
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_ambipose"))
            .args(args)
            .env("AMBIPOSE_OUT_DIR", dir)
            .env("AMBIPOSE_THREADS", threads)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let data = dir.join("round_table");
    let data = data.to_str().unwrap();
    let ckpt = dir.join("model.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    run(&[
        "gen",
        "--scene",
        "round_table",
        "--train",
        "8",
        "--test",
        "4",
        "--seed",
        "7",
    ]);
    run(&[
        "train",
        "--dataset",
        data,
        "--epochs",
        "2",
        "--mc-samples",
        "20",
        "--seed",
        "3",
        "--log-every",
        "0",
    ]);
    run(&["eval", "--dataset", data, "--checkpoint", ckpt, "--mc-samples", "50"]);
    run(&[
        "viz",
        "--dataset",
        data,
        "--checkpoint",
        ckpt,
        "--bins",
        "8,6",
        "--mc-samples",
        "50",
        "--query",
        "1",
    ]);
    run(&[
        "sweep-alpha",
        "--dataset",
        data,
        "--alphas",
        "0.2,1.0",
        "--runs",
        "2",
        "--epochs",
        "1",
        "--mc-samples",
        "10",
        "--eval-samples",
        "20",
    ]);
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in fs::read_dir(&p).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "train_timing.csv" {
                files.push((
                    path.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&path).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn reruns_reproduce_every_file_byte_for_byte() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path(), "1");
    let second = pipeline(b.path(), "3");
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    for expected in [
        "model.ckpt",
        "train_report.csv",
        "eval.json",
        "eval.txt",
        "position.ppm",
        "position.csv",
        "orientation.ppm",
        "sweep_alpha.csv",
    ] {
        assert!(names.contains(&expected), "{expected} missing from {names:?}");
    }
    assert_eq!(first.len(), second.len());
    for ((na, da), (nb, db)) in first.iter().zip(&second) {
        assert_eq!(na, nb);
        assert!(da == db, "{na} differs between runs");
    }
}
