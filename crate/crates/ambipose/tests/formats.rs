use std::fs;
use std::path::Path;

use ambipose::checkpoint::{self, Checkpoint};
use ambipose::cli::{TrainArgs, TrainFlags};
use ambipose::commands::{self, Context};
use ambipose::config::{resolve, TrainFile, TrainOverlay};
use ambipose::dataset::{read_dataset, read_manifest, write_dataset};
use ambipose::Error;
use ambipose_core::model::Architecture;
use ambipose_core::scenes::{generate_dataset, SceneSpec};
use ambipose_core::trainer::{init_seed, TrainConfig, TrainMode, Trainer};
use ambipose_core::PoseRegressor;

fn small_dataset(dir: &Path) {
    let spec = SceneSpec::builtin("round_table").unwrap();
    write_dataset(dir, &generate_dataset(&spec, 8, 4, 3).unwrap()).unwrap();
}

fn train_args(dataset: &Path, checkpoint: &Path, epochs: usize) -> TrainArgs {
    TrainArgs {
        dataset: Some(dataset.to_path_buf()),
        config: None,
        flags: TrainFlags {
            epochs: Some(epochs),
            mc_samples: Some(20),
            seed: Some(5),
            ..TrainFlags::default()
        },
        checkpoint: Some(checkpoint.to_path_buf()),
        save_state: true,
        resume: None,
        log_every: 0,
    }
}

#[test]
fn dataset_roundtrip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec::builtin("dinner_table").unwrap();
    let ds = generate_dataset(&spec, 12, 5, 9).unwrap();
    let manifest = write_dataset(dir.path(), &ds).unwrap();
    assert_eq!(
        (manifest.n_train, manifest.n_test, manifest.scene.symmetry_order),
        (12, 5, 2)
    );
    assert_eq!(read_manifest(dir.path()).unwrap(), manifest);
    let back = read_dataset(dir.path()).unwrap();
    for (a, b) in ds.train.iter().chain(&ds.test).zip(back.train.iter().chain(&back.test)) {
        assert_eq!(a.obs, b.obs);
        assert_eq!(a.pose, b.pose);
    }
}

#[test]
fn truncated_records_are_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let file = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "bin"))
        .unwrap();
    let bytes = fs::read(&file).unwrap();
    fs::write(&file, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Format { .. })));
}

#[test]
fn checkpoint_roundtrip_preserves_model_and_state() {
    let spec = SceneSpec::builtin("round_table").unwrap();
    let ds = generate_dataset(&spec, 6, 2, 1).unwrap();
    for mode in [TrainMode::Wta, TrainMode::Ablation] {
        let cfg = TrainConfig {
            mode,
            epochs: 3,
            mc_samples: 10,
            ..TrainConfig::default()
        };
        let model = PoseRegressor::new(
            &Architecture::default(),
            spec.bounds,
            mode.regressor_mode(),
            init_seed(&cfg),
        )
        .unwrap();
        let mut t = Trainer::new(model, cfg).unwrap();
        t.run_epoch(&ds.train).unwrap();
        let ckpt = Checkpoint::from_trainer(&spec.name, &t);
        let bytes = checkpoint::encode(&ckpt);
        let back = checkpoint::decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(checkpoint::encode(&back), bytes);
        assert!(checkpoint::decode(&bytes[..bytes.len() / 2], Path::new("mem")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(checkpoint::decode(&bad, Path::new("mem")).is_err());
    }
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_dataset(&data);
    let ctx = Context {
        out_dir: dir.path().to_path_buf(),
        threads: 1,
    };

    let full = dir.path().join("full/model.ckpt");
    commands::train(&ctx, &train_args(&data, &full, 4), |_| {}).unwrap();

    let half = dir.path().join("half/model.ckpt");
    commands::train(&ctx, &train_args(&data, &half, 2), |_| {}).unwrap();
    let resumed = dir.path().join("resumed/model.ckpt");
    let mut args = train_args(&data, &resumed, 4);
    args.resume = Some(half);
    commands::train(&ctx, &args, |_| {}).unwrap();

    assert_eq!(fs::read(&full).unwrap(), fs::read(&resumed).unwrap());
    let report = |p: &Path| fs::read_to_string(p.parent().unwrap().join("train_report.csv")).unwrap();
    let tail: Vec<String> = report(&full).lines().skip(3).map(String::from).collect();
    assert_eq!(
        report(&resumed).lines().skip(1).map(String::from).collect::<Vec<_>>(),
        tail
    );
}

#[test]
fn flags_override_the_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.json");
    fs::write(
        &path,
        r#"{"alpha": 0.3, "epochs": 7, "beta": 0.5, "architecture": {"latent_dim": 8}}"#,
    )
    .unwrap();
    let file = TrainFile::load(&path).unwrap();
    let flags = TrainOverlay {
        epochs: Some(9),
        ..TrainOverlay::default()
    };
    let (cfg, arch) = resolve(Some(&file), &flags, 64).unwrap();
    assert_eq!(cfg.alpha, 0.3);
    assert_eq!(cfg.epochs, 9);
    assert_eq!(cfg.beta, Some(0.5));
    assert_eq!(cfg.batch_size, TrainConfig::default().batch_size);
    assert_eq!((arch.latent_dim, arch.obs_dim), (8, 64));

    fs::write(&path, r#"{"alpah": 0.3}"#).unwrap();
    assert!(matches!(TrainFile::load(&path), Err(Error::Invalid(_))));

    let err = resolve(
        None,
        &TrainOverlay {
            alpha: Some(1.5),
            batch_size: Some(0),
            ..TrainOverlay::default()
        },
        64,
    )
    .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("alpha") && msg.contains("batch_size"), "{msg}");
    assert_eq!(err.exit_code(), 1);
}
