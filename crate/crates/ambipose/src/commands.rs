//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ambipose_core::eval::{evaluate, quantile_summary, recall, RecallThreshold, Timing};
use ambipose_core::model::Architecture;
use ambipose_core::scenes::{generate_dataset, render_observation, ring_pose, Dataset, LabeledSample, SceneSpec};
use ambipose_core::trainer::{init_seed, TrainConfig, Trainer};
use ambipose_core::viz::{orientation_heatmap, position_heatmap};
use ambipose_core::{seed, PoseRegressor};

use crate::checkpoint::{self, Checkpoint};
use crate::cli::{BenchArgs, EvalArgs, GenArgs, Split, SweepArgs, TrainArgs, VizArgs};
use crate::config::{resolve, TrainFile};
use crate::dataset::{read_dataset, write_dataset, Manifest};
use crate::error::{Error, Result};
use crate::report::{eval_json, write_file, write_heatmap, EpochRecord, TrainReport};
use crate::run::{benchmark_inference, parallel_map, sample_queries_parallel};

/// Shared settings of every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub out_dir: PathBuf,
    pub threads: usize,
}

impl Context {
    fn output(&self, explicit: &Option<PathBuf>, default_name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out_dir.join(default_name))
    }
}

pub fn gen(ctx: &Context, args: &GenArgs) -> Result<(PathBuf, Manifest)> {
    let mut spec = match (&args.scene, &args.spec) {
        (Some(name), None) => SceneSpec::builtin(name)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(Error::io(path))?;
            serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?
        }
        _ => return Err(Error::Invalid("give exactly one of --scene or --spec".into())),
    };
    if let Some(eta) = args.eta {
        spec = spec.with_distinguishing_strength(eta);
    }
    let ds = generate_dataset(&spec, args.n_train, args.n_test, args.seed)?;
    let dir = ctx.output(&args.out, &spec.name);
    let manifest = write_dataset(&dir, &ds)?;
    Ok((dir, manifest))
}

fn split(ds: &Dataset, which: Split) -> &[LabeledSample] {
    match which {
        Split::Train => &ds.train,
        Split::Test => &ds.test,
    }
}

fn check_dims(ds: &Dataset, model: &PoseRegressor) -> Result<()> {
    if ds.spec.obs_dim() != model.obs_dim() {
        return Err(Error::DimensionMismatch {
            manifest: ds.spec.obs_dim(),
            checkpoint: model.obs_dim(),
        });
    }
    Ok(())
}

/// Trains until the configured epoch count and writes the checkpoint plus
/// `train_report.csv` and `train_timing.csv` next to it.
pub fn train(ctx: &Context, args: &TrainArgs, mut log: impl FnMut(&str)) -> Result<TrainReport> {
    let file = args.config.as_deref().map(TrainFile::load).transpose()?;
    let dataset_dir = args
        .dataset
        .clone()
        .or_else(|| file.as_ref().and_then(|f| f.dataset.clone()))
        .ok_or_else(|| Error::Invalid("no dataset given (use --dataset or the config's \"dataset\" key)".into()))?;
    let ds = read_dataset(&dataset_dir)?;

    let mut trainer = match &args.resume {
        Some(path) => {
            let ckpt = checkpoint::load(path)?;
            check_dims(&ds, &ckpt.model)?;
            let mut t = ckpt
                .into_trainer()
                .ok_or_else(|| Error::Invalid(format!("{} holds no optimizer state", path.display())))?;
            args.flags.overlay().apply(&mut t.cfg);
            t.cfg.validate().map_err(|e| Error::Invalid(e.to_string()))?;
            t
        }
        None => {
            let (cfg, arch) = resolve(file.as_ref(), &args.flags.overlay(), ds.spec.obs_dim())?;
            let model = PoseRegressor::new(&arch, ds.spec.bounds, cfg.mode.regressor_mode(), init_seed(&cfg))?;
            Trainer::new(model, cfg)?
        }
    };

    let mut report = TrainReport {
        checkpoint: ctx.output(&args.checkpoint, "model.ckpt"),
        ..Default::default()
    };
    while !trainer.finished() {
        let start = Instant::now();
        let stats = trainer.run_epoch(&ds.train)?;
        let seconds = start.elapsed().as_secs_f64();
        if args.log_every > 0 && (stats.epoch + 1) % args.log_every == 0 {
            log(&format!(
                "epoch {:4}  loss {:.5}  error {:.5}  kl {:.3}  lr {:.2e}  {:.2}s",
                stats.epoch + 1,
                stats.loss,
                stats.selected_error,
                stats.kl,
                stats.lr,
                seconds
            ));
        }
        report.epochs.push(EpochRecord { stats, seconds });
    }

    let ckpt = if args.save_state {
        Checkpoint::from_trainer(&ds.spec.name, &trainer)
    } else {
        Checkpoint {
            scene: ds.spec.name.clone(),
            model: trainer.model,
            state: None,
        }
    };
    checkpoint::save(&report.checkpoint, &ckpt)?;
    let dir = report.checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf();
    write_file(&dir.join("train_report.csv"), report.to_csv())?;
    write_file(&dir.join("train_timing.csv"), report.timing_csv())?;
    Ok(report)
}

pub fn parse_thresholds(text: &str, gamma: f64) -> Result<Vec<RecallThreshold>> {
    text.split(',')
        .map(|pair| {
            let (t, r) = pair
                .trim()
                .split_once('/')
                .ok_or_else(|| Error::Invalid(format!("threshold '{pair}' is not METERS/DEGREES")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Invalid(format!("bad number in threshold '{pair}'")))
            };
            Ok(RecallThreshold::new(parse(t)?, parse(r)?, gamma)?)
        })
        .collect()
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str, count: Option<usize>) -> Result<Vec<T>> {
    let values = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::Invalid(format!("bad {what} value '{s}'")))
        })
        .collect::<Result<Vec<T>>>()?;
    if let Some(n) = count.filter(|&n| n != values.len()) {
        return Err(Error::Invalid(format!("{what} needs {n} comma-separated values")));
    }
    Ok(values)
}

/// Writes the JSON report and an aligned text table with a `.txt` extension.
pub fn eval(ctx: &Context, args: &EvalArgs) -> Result<ambipose_core::eval::EvalReport> {
    let thresholds = parse_thresholds(&args.thresholds, args.gamma)?;
    if args.mc_samples == 0 {
        return Err(Error::Invalid("--mc-samples must be at least 1".into()));
    }
    let ds = read_dataset(&args.dataset)?;
    let ckpt = checkpoint::load(&args.checkpoint)?;
    check_dims(&ds, &ckpt.model)?;
    let queries = split(&ds, args.split);
    let samples = sample_queries_parallel(&ckpt.model, queries, args.mc_samples, args.seed, ctx.threads)?;
    let mut report = evaluate(&ds.spec, queries, &samples, &thresholds, args.mc_samples, args.seed)?;
    if args.time {
        report.timing = Some(benchmark_inference(
            &ckpt.model,
            &queries[0].obs,
            args.mc_samples,
            100,
            args.seed,
        )?);
    }
    let path = ctx.output(&args.report, "eval.json");
    write_file(&path, eval_json(&report))?;
    write_file(&path.with_extension("txt"), report.to_table())?;
    Ok(report)
}

pub fn viz(ctx: &Context, args: &VizArgs) -> Result<Vec<PathBuf>> {
    let bins: Vec<usize> = parse_list(&args.bins, "--bins", Some(2))?;
    let ds = read_dataset(&args.dataset)?;
    let ckpt = checkpoint::load(&args.checkpoint)?;
    check_dims(&ds, &ckpt.model)?;
    let queries = split(&ds, args.split);
    let query = queries.get(args.query).ok_or_else(|| {
        Error::Invalid(format!(
            "query index {} out of range (split has {})",
            args.query,
            queries.len()
        ))
    })?;
    let extent = match &args.bounds {
        Some(b) => parse_list::<f64>(b, "--bounds", Some(4))?,
        None => {
            let b = ckpt.model.bounds;
            vec![b.min[0], b.max[0], b.min[1], b.max[1]]
        }
    };
    let sample_seed = seed::derive(args.seed, seed::purpose::SAMPLING, args.query as u64);
    let samples = ckpt
        .model
        .predict_posterior(&query.obs, args.mc_samples, sample_seed)?
        .poses;

    let position = position_heatmap(
        &samples,
        [extent[0], extent[1]],
        [extent[2], extent[3]],
        bins[0],
        bins[1],
    )?;
    let orientation = orientation_heatmap(&samples, bins[0], bins[1])?;
    let pos_path = ctx.output(&args.heatmap, "position.ppm");
    let ori_path = ctx.output(&args.orientation, "orientation.ppm");
    let pos_csv = write_heatmap(&pos_path, &position, args.cell)?;
    let ori_csv = write_heatmap(&ori_path, &orientation, args.cell)?;
    Ok(vec![pos_path, pos_csv, ori_path, ori_csv])
}

pub fn bench(args: &BenchArgs) -> Result<Timing> {
    if args.repeats < 2 {
        return Err(Error::Invalid("--repeats must be at least 2".into()));
    }
    if args.mc_samples == 0 {
        return Err(Error::Invalid("--mc-samples must be at least 1".into()));
    }
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let obs = match &args.dataset {
        Some(dir) => {
            let ds = read_dataset(dir)?;
            check_dims(&ds, &ckpt.model)?;
            ds.test[0].obs.clone()
        }
        None => match SceneSpec::builtin(&ckpt.scene) {
            Ok(spec) if spec.obs_dim() == ckpt.model.obs_dim() => {
                let pose = ring_pose(0.3, spec.ring_radius, spec.camera_height);
                render_observation(&spec, &pose, &mut seed::rng(args.seed))?
            }
            _ => vec![0.0; ckpt.model.obs_dim()],
        },
    };
    benchmark_inference(&ckpt.model, &obs, args.mc_samples, args.repeats, args.seed)
}

/// One finished sweep run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub alpha: f64,
    pub run: usize,
    pub seed: u64,
    pub recall: f64,
}

/// Default recall `γ` for a scene: 0.05 on the six-fold ceiling scene.
pub fn default_gamma(spec: &SceneSpec) -> f64 {
    if spec.name == "ceiling_grid" {
        0.05
    } else {
        0.1
    }
}

/// Trains `runs` models for every alpha and returns per-run recall at the
/// tightest table threshold.
#[allow(clippy::too_many_arguments)]
pub fn sweep_runs(
    ds: &Dataset,
    base: &TrainConfig,
    arch: &Architecture,
    alphas: &[f64],
    runs: usize,
    gamma: f64,
    eval_samples: usize,
    threads: usize,
) -> Result<Vec<SweepRun>> {
    let th = RecallThreshold::table(ds.spec.scale(), gamma)[0];
    let jobs: Vec<(usize, usize)> = (0..alphas.len()).flat_map(|a| (0..runs).map(move |r| (a, r))).collect();
    let results = parallel_map(jobs, threads, |(a, r)| -> Result<SweepRun> {
        let run_seed = seed::derive(base.seed, seed::purpose::RUN, (a * runs + r) as u64);
        let cfg = TrainConfig {
            alpha: alphas[a],
            seed: run_seed,
            ..base.clone()
        };
        let model = ambipose_core::trainer::train(&ds.train, arch, ds.spec.bounds, &cfg, |_| {})?;
        let samples = ambipose_core::eval::sample_queries(&model, &ds.test, eval_samples, run_seed)?;
        let rec = recall(
            samples.iter().map(Vec::as_slice).zip(ds.test.iter().map(|q| &q.pose)),
            &th,
        )?;
        Ok(SweepRun {
            alpha: alphas[a],
            run: r,
            seed: run_seed,
            recall: rec,
        })
    });
    results.into_iter().collect()
}

/// Per-run rows followed by min/q1/median/q3/max rows for every alpha.
pub fn sweep_csv(runs: &[SweepRun], alphas: &[f64]) -> String {
    let mut out = String::from("alpha,run,recall\n");
    for r in runs {
        out.push_str(&format!("{},{},{}\n", r.alpha, r.run, r.recall));
    }
    for &a in alphas {
        let values: Vec<f64> = runs.iter().filter(|r| r.alpha == a).map(|r| r.recall).collect();
        if let Some(q) = quantile_summary(&values) {
            for (name, v) in ["min", "q1", "median", "q3", "max"].iter().zip(q) {
                out.push_str(&format!("{a},{name},{v}\n"));
            }
        }
    }
    out
}

pub fn sweep_alpha(ctx: &Context, args: &SweepArgs) -> Result<(PathBuf, Vec<SweepRun>)> {
    let alphas: Vec<f64> = parse_list(&args.alphas, "--alphas", None)?;
    if args.runs == 0 {
        return Err(Error::Invalid("--runs must be at least 1".into()));
    }
    let ds = read_dataset(&args.dataset)?;
    let file = args.config.as_deref().map(TrainFile::load).transpose()?;
    let (base, arch) = resolve(file.as_ref(), &args.flags.overlay(), ds.spec.obs_dim())?;
    for &a in &alphas {
        TrainConfig {
            alpha: a,
            ..base.clone()
        }
        .validate()
        .map_err(|e| Error::Invalid(e.to_string()))?;
    }
    let gamma = args.gamma.unwrap_or_else(|| default_gamma(&ds.spec));
    RecallThreshold::new(0.1, 10.0, gamma)?;
    let runs = sweep_runs(
        &ds,
        &base,
        &arch,
        &alphas,
        args.runs,
        gamma,
        args.eval_samples,
        ctx.threads,
    )?;
    let path = ctx.output(&args.out, "sweep_alpha.csv");
    write_file(&path, sweep_csv(&runs, &alphas))?;
    Ok((path, runs))
}
