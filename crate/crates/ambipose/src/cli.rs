//! Command-line interface definitions.

use std::path::PathBuf;

use ambipose_core::trainer::TrainMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::TrainOverlay;

#[derive(Debug, Parser)]
#[command(
    name = "ambipose",
    version,
    about = "Learn and sample multimodal camera-pose posteriors on ambiguous synthetic scenes"
)]
pub struct Cli {
    /// Directory receiving outputs whose paths are not given explicitly.
    #[arg(long, global = true, env = "AMBIPOSE_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads for evaluation and sweeps (0 = all cores).
    #[arg(long, global = true, env = "AMBIPOSE_THREADS", default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset directory for a built-in or custom scene.
    Gen(GenArgs),
    /// Train a model on a dataset and write a checkpoint plus report.
    Train(TrainArgs),
    /// Evaluate recall, median errors and mode coverage on a dataset split.
    Eval(EvalArgs),
    /// Write position and orientation heatmaps for one query.
    Viz(VizArgs),
    /// Time posterior sampling for a single query.
    Bench(BenchArgs),
    /// Train several models per alpha and summarize their recall.
    SweepAlpha(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Built-in scene: round_table, dinner_table, ceiling_grid, unambiguous.
    #[arg(long, conflicts_with = "spec")]
    pub scene: Option<String>,
    /// JSON scene spec file instead of a built-in scene.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Override the distinguishing strength eta in [0, 1].
    #[arg(long)]
    pub eta: Option<f64>,
    /// Training images.
    #[arg(long = "train", default_value_t = 900)]
    pub n_train: usize,
    /// Test images.
    #[arg(long = "test", default_value_t = 300)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset directory [default: <out-dir>/<scene name>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Training flags; each one overrides the config file and built-in default.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    /// Fraction of samples receiving the prediction loss [default: 0.2].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// KL weight [default: 0.01 for wta, 1 for elbo].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Translation weight of the pose distance [default: 5].
    #[arg(long)]
    pub lambda_t: Option<f64>,
    /// Rotation weight of the pose distance [default: 2].
    #[arg(long)]
    pub lambda_r: Option<f64>,
    /// Monte-Carlo samples per image [default: 1000].
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Images per optimizer step [default: 4].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// [default: 500]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initial learning rate [default: 1e-4].
    #[arg(long = "lr")]
    pub lr0: Option<f64>,
    /// Epochs between learning-rate decays [default: 50].
    #[arg(long)]
    pub n_lr_decay: Option<usize>,
    /// L2 penalty on the encoder weights [default: 0].
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Objective [default: wta].
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Seed for initialization, shuffling and latent draws [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Wta,
    Elbo,
    Ablation,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Wta => TrainMode::Wta,
            ModeArg::Elbo => TrainMode::Elbo,
            ModeArg::Ablation => TrainMode::Ablation,
        }
    }
}

impl TrainFlags {
    pub fn overlay(&self) -> TrainOverlay {
        TrainOverlay {
            alpha: self.alpha,
            beta: self.beta,
            lambda_t: self.lambda_t,
            lambda_r: self.lambda_r,
            mc_samples: self.mc_samples,
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr0: self.lr0,
            n_lr_decay: self.n_lr_decay,
            weight_decay: self.weight_decay,
            mode: self.mode.map(Into::into),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset directory (may also come from the config file).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// JSON training config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Output checkpoint [default: <out-dir>/model.ckpt].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Keep optimizer state in the checkpoint so training can be resumed.
    #[arg(long)]
    pub save_state: bool,
    /// Continue from a checkpoint written with --save-state.
    #[arg(long, conflicts_with = "config")]
    pub resume: Option<PathBuf>,
    /// Print a progress line every N epochs (0 = silent).
    #[arg(long, default_value_t = 10)]
    pub log_every: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated METERS/DEGREES pairs.
    #[arg(long, default_value = "0.1/10,0.2/15,0.3/20")]
    pub thresholds: String,
    /// Minimum fraction of in-threshold samples for a true positive.
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1000)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Also time posterior sampling on the first query.
    #[arg(long)]
    pub time: bool,
    /// JSON report [default: <out-dir>/eval.json]; a text table is written next to it.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Query index within the split.
    #[arg(long, default_value_t = 0)]
    pub query: usize,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    #[arg(long, default_value_t = 1000)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Histogram bins as NX,NY.
    #[arg(long, default_value = "100,100")]
    pub bins: String,
    /// Position heatmap extent as X0,X1,Y0,Y1 [default: scene bounds].
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: Option<String>,
    /// Position heatmap [default: <out-dir>/position.ppm].
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    /// Orientation heatmap [default: <out-dir>/orientation.ppm].
    #[arg(long)]
    pub orientation: Option<PathBuf>,
    /// Pixels per histogram cell.
    #[arg(long, default_value_t = 4)]
    pub cell: usize,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Take the query observation from this dataset's test split
    /// [default: a rendering of the checkpoint's built-in scene].
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 100)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated alpha values.
    #[arg(long, default_value = "0.01,0.05,0.1,0.2,0.5,1.0")]
    pub alphas: String,
    /// Training runs per alpha.
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    /// JSON training config applied to every run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Recall gamma [default: 0.05 for ceiling_grid, 0.1 otherwise].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Samples per query during evaluation.
    #[arg(long, default_value_t = 1000)]
    pub eval_samples: usize,
    /// Output CSV [default: <out-dir>/sweep_alpha.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
}
