//! Winners-take-all training.
//!
//! For every image the encoder's latent Gaussian is sampled `M` times, each
//! sample is decoded to a pose and scored against the ground truth. Only the
//! `max(1, ⌊α·M⌋)` closest samples contribute to the prediction-error term;
//! a KL term weighted by `β` keeps the latent posterior near `N(0, I)`.
//! With `α = 1` the objective is the plain Monte-Carlo ELBO.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::diffnet::{adam_step, lr_schedule, AdamConfig, AdamState, GradientTape, Matrix};
use crate::geometry::{pose_distance, pose_distance_grad, PoseDistanceWeights};
use crate::model::{
    decode_raw, kl_gradient, kl_to_standard_normal, latent_noise, reparameterize, Architecture, GaussianLatent,
    ModelError, PoseRegressor, RegressorMode, SceneBounds, LOG_VAR_MAX, LOG_VAR_MIN,
};
use crate::scenes::LabeledSample;
use crate::{math, seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TrainMode {
    /// Mean error over the closest fraction `α` of samples plus `β·KL`.
    Wta,
    /// Mean error over all samples plus `β·KL` (`β` defaults to 1).
    Elbo,
    /// Single-point encoder, one decode per image, no KL.
    Ablation,
}

impl TrainMode {
    pub fn regressor_mode(self) -> RegressorMode {
        match self {
            TrainMode::Ablation => RegressorMode::Ablation,
            TrainMode::Wta | TrainMode::Elbo => RegressorMode::Variational,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub alpha: f64,
    /// KL weight; `None` selects the mode default (0.01 for WTA, 1 for ELBO).
    pub beta: Option<f64>,
    pub weights: PoseDistanceWeights,
    pub mc_samples: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub n_lr_decay: usize,
    /// L2 penalty on the encoder weights.
    pub weight_decay: f64,
    pub mode: TrainMode,
    pub seed: u64,
}

pub const DEFAULT_WTA_BETA: f64 = 0.01;
pub const DEFAULT_ELBO_BETA: f64 = 1.0;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.20,
            beta: None,
            weights: PoseDistanceWeights::default(),
            mc_samples: 1000,
            batch_size: 4,
            epochs: 500,
            lr0: 1e-4,
            n_lr_decay: 50,
            weight_decay: 0.0,
            mode: TrainMode::Wta,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid training config: {}", .problems.join("; "))]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl TrainConfig {
    pub fn effective_beta(&self) -> f64 {
        match (self.beta, self.mode) {
            (_, TrainMode::Ablation) => 0.0,
            (Some(b), _) => b,
            (None, TrainMode::Wta) => DEFAULT_WTA_BETA,
            (None, TrainMode::Elbo) => DEFAULT_ELBO_BETA,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            problems.push(format!("alpha: must lie in (0, 1], got {}", self.alpha));
        }
        if let Some(b) = self.beta {
            if !(b >= 0.0) {
                problems.push(format!("beta: must be non-negative, got {b}"));
            }
        }
        if self.weights.validate().is_err() {
            problems.push(format!(
                "weights: lambda_t and lambda_r must be positive, got {} and {}",
                self.weights.translation, self.weights.rotation
            ));
        }
        if self.mc_samples < 1 {
            problems.push("mc_samples: must be at least 1".into());
        }
        if self.batch_size < 1 {
            problems.push("batch_size: must be at least 1".into());
        }
        if !(self.lr0 > 0.0) {
            problems.push(format!("lr0: must be positive, got {}", self.lr0));
        }
        if self.n_lr_decay < 1 {
            problems.push("n_lr_decay: must be at least 1".into());
        }
        if !(self.weight_decay >= 0.0) {
            problems.push(format!("weight_decay: must be non-negative, got {}", self.weight_decay));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { problems })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("empty training set")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch} (kl {kl}, error {error})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        kl: f64,
        error: f64,
    },
}

/// Number of winners kept out of `count` samples.
pub fn winner_count(count: usize, alpha: f64) -> usize {
    // The small guard keeps e.g. 0.29·100 from flooring to 28.
    let m = math::floor(alpha * count as f64 + 1e-9) as usize;
    m.clamp(1, count.max(1))
}

/// Indices of the `max(1, ⌊α·M⌋)` smallest distances, ties broken by lower
/// index, returned in ascending index order.
pub fn select_winners(distances: &[f64], alpha: f64) -> Vec<usize> {
    if distances.is_empty() {
        return Vec::new();
    }
    let m = winner_count(distances.len(), alpha);
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    order.truncate(m);
    order.sort_unstable();
    order
}

/// Loss terms of one image.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImageLoss {
    pub total: f64,
    pub kl: f64,
    /// Mean pose distance over the supervised samples.
    pub selected_error: f64,
    /// Mean pose distance over every drawn sample.
    pub mean_error: f64,
    pub winners: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub encoder: GradientTape,
    pub posemap: GradientTape,
}

impl ModelGradient {
    pub fn zeros_like(model: &PoseRegressor) -> Self {
        ModelGradient {
            encoder: GradientTape::zeros_like(&model.encoder),
            posemap: GradientTape::zeros_like(&model.posemap),
        }
    }

    fn scale(&mut self, s: f64) {
        self.encoder.scale(s);
        self.posemap.scale(s);
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.posemap.is_finite()
    }
}

/// Objective value of one labeled image and its gradient with respect to
/// both networks. `noise_seed` fixes the Monte-Carlo draws.
///
/// The winner selection is recomputed on every call and treated as a
/// constant when differentiating.
pub fn per_image_loss(
    model: &PoseRegressor,
    sample: &LabeledSample,
    cfg: &TrainConfig,
    noise_seed: u64,
) -> Result<(ImageLoss, ModelGradient), ModelError> {
    let mut grad = ModelGradient::zeros_like(model);
    let loss = accumulate_image_loss(model, sample, cfg, noise_seed, &mut grad)?;
    Ok((loss, grad))
}

/// Like [`per_image_loss`], but adds the gradient to `grad`.
pub fn accumulate_image_loss(
    model: &PoseRegressor,
    sample: &LabeledSample,
    cfg: &TrainConfig,
    noise_seed: u64,
    grad: &mut ModelGradient,
) -> Result<ImageLoss, ModelError> {
    let d = model.latent_dim;
    let (enc_out, enc_cache) = model.encoder.forward(&sample.obs)?;
    let truth = &sample.pose;
    let w = &cfg.weights;

    if cfg.mode == TrainMode::Ablation || model.mode == RegressorMode::Ablation {
        let mean = Matrix::row_vector(&enc_out[..d]);
        let (u, pm_cache) = model.posemap.forward_batch(&mean)?;
        let (pose, trace) = decode_raw(&model.bounds, &u.data)?;
        let error = pose_distance(&pose, truth, w);
        let (gt, gr) = pose_distance_grad(&pose, truth, w);
        let du = trace.backward(&gt, &gr);
        let dz = model
            .posemap
            .backward_accumulate(&pm_cache, &Matrix::row_vector(&du), &mut grad.posemap)?;
        let mut d_out = vec![0.0; 2 * d];
        d_out[..d].copy_from_slice(&dz.data);
        model
            .encoder
            .backward_accumulate(&enc_cache, &Matrix::row_vector(&d_out), &mut grad.encoder)?;
        return Ok(ImageLoss {
            total: error,
            kl: 0.0,
            selected_error: error,
            mean_error: error,
            winners: 1,
        });
    }

    let raw_log_var = &enc_out[d..2 * d];
    let latent = GaussianLatent::new(enc_out[..d].to_vec(), raw_log_var.to_vec());
    let sd = latent.std_dev();
    let noise = latent_noise(noise_seed, cfg.mc_samples, d);
    let z = reparameterize(&latent, &noise);
    let u_all = model.posemap.predict_batch(&z)?;
    let mut distances = Vec::with_capacity(z.rows);
    for j in 0..u_all.rows {
        let (pose, _) = decode_raw(&model.bounds, u_all.row(j))?;
        distances.push(pose_distance(&pose, truth, w));
    }
    let winners = match cfg.mode {
        TrainMode::Elbo => (0..distances.len()).collect(),
        _ => select_winners(&distances, cfg.alpha),
    };
    let m = winners.len();
    let selected_error = winners.iter().map(|&j| distances[j]).sum::<f64>() / m as f64;
    let mean_error = distances.iter().sum::<f64>() / distances.len() as f64;
    let beta = cfg.effective_beta();
    let kl = kl_to_standard_normal(&latent);

    // Backward through the supervised samples only.
    let z_win = z.select_rows(&winners);
    let (u_win, pm_cache) = model.posemap.forward_batch(&z_win)?;
    let mut du = Matrix::zeros(m, u_win.cols);
    for r in 0..m {
        let (pose, trace) = decode_raw(&model.bounds, u_win.row(r))?;
        let (mut gt, mut gr) = pose_distance_grad(&pose, truth, w);
        gt.iter_mut().chain(gr.iter_mut()).for_each(|g| *g /= m as f64);
        du.row_mut(r).copy_from_slice(&trace.backward(&gt, &gr));
    }
    let dz = model.posemap.backward_accumulate(&pm_cache, &du, &mut grad.posemap)?;

    let (kl_mean, kl_log_var) = kl_gradient(&latent);
    let mut d_out = vec![0.0; 2 * d];
    for k in 0..d {
        d_out[k] = beta * kl_mean[k];
        d_out[d + k] = beta * kl_log_var[k];
    }
    for (r, &j) in winners.iter().enumerate() {
        let eps = noise.row(j);
        for (k, g) in dz.row(r).iter().enumerate() {
            d_out[k] += g;
            d_out[d + k] += g * eps[k] * 0.5 * sd[k];
        }
    }
    for k in 0..d {
        if !(LOG_VAR_MIN..=LOG_VAR_MAX).contains(&raw_log_var[k]) {
            d_out[d + k] = 0.0;
        }
    }
    model
        .encoder
        .backward_accumulate(&enc_cache, &Matrix::row_vector(&d_out), &mut grad.encoder)?;
    Ok(ImageLoss {
        total: beta * kl + selected_error,
        kl,
        selected_error,
        mean_error,
        winners: m,
    })
}

/// Averages over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub selected_error: f64,
    pub mean_error: f64,
    pub kl: f64,
    pub lr: f64,
}

/// Model plus optimizer state; advances one epoch at a time.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: PoseRegressor,
    pub cfg: TrainConfig,
    pub encoder_opt: AdamState,
    pub posemap_opt: AdamState,
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: PoseRegressor, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let encoder_opt = AdamState::new(
            &model.encoder,
            AdamConfig {
                lr: cfg.lr0,
                weight_decay: cfg.weight_decay,
                ..AdamConfig::default()
            },
        );
        let posemap_opt = AdamState::new(
            &model.posemap,
            AdamConfig {
                lr: cfg.lr0,
                ..AdamConfig::default()
            },
        );
        Ok(Trainer {
            model,
            cfg,
            encoder_opt,
            posemap_opt,
            epoch: 0,
        })
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    /// One pass over `data` in a seeded random order.
    pub fn run_epoch(&mut self, data: &[LabeledSample]) -> Result<EpochStats, TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let epoch = self.epoch;
        let lr = lr_schedule(epoch, self.cfg.lr0, self.cfg.n_lr_decay);
        self.encoder_opt.config.lr = lr;
        self.posemap_opt.config.lr = lr;

        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive(
            self.cfg.seed,
            seed::purpose::SHUFFLE,
            epoch as u64,
        )));
        let epoch_seed = seed::derive(self.cfg.seed, seed::purpose::LATENT, epoch as u64);

        let mut totals = ImageLoss::default();
        let mut grad = ModelGradient::zeros_like(&self.model);
        for (batch, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            grad.encoder.zero();
            grad.posemap.zero();
            let mut batch_loss = ImageLoss::default();
            for &i in chunk {
                let noise_seed = seed::derive(epoch_seed, seed::purpose::LATENT, i as u64);
                let loss = accumulate_image_loss(&self.model, &data[i], &self.cfg, noise_seed, &mut grad)?;
                batch_loss.total += loss.total;
                batch_loss.kl += loss.kl;
                batch_loss.selected_error += loss.selected_error;
                batch_loss.mean_error += loss.mean_error;
            }
            grad.scale(1.0 / chunk.len() as f64);
            if !batch_loss.total.is_finite() || !grad.is_finite() {
                let n = chunk.len() as f64;
                return Err(TrainError::NonFinite {
                    epoch,
                    batch,
                    kl: batch_loss.kl / n,
                    error: batch_loss.selected_error / n,
                });
            }
            adam_step(&mut self.model.encoder, &grad.encoder, &mut self.encoder_opt);
            adam_step(&mut self.model.posemap, &grad.posemap, &mut self.posemap_opt);
            totals.total += batch_loss.total;
            totals.kl += batch_loss.kl;
            totals.selected_error += batch_loss.selected_error;
            totals.mean_error += batch_loss.mean_error;
        }
        self.epoch += 1;
        let n = data.len() as f64;
        Ok(EpochStats {
            epoch,
            loss: totals.total / n,
            selected_error: totals.selected_error / n,
            mean_error: totals.mean_error / n,
            kl: totals.kl / n,
            lr,
        })
    }
}

/// Seed used to initialize model weights for a training config.
pub fn init_seed(cfg: &TrainConfig) -> u64 {
    seed::derive(cfg.seed, seed::purpose::INIT, 0)
}

/// Trains a freshly initialized model for `cfg.epochs` epochs, calling
/// `on_epoch` after each one.
pub fn train(
    data: &[LabeledSample],
    arch: &Architecture,
    bounds: SceneBounds,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<PoseRegressor, TrainError> {
    cfg.validate()?;
    let model = PoseRegressor::new(arch, bounds, cfg.mode.regressor_mode(), init_seed(cfg))?;
    let mut trainer = Trainer::new(model, cfg.clone())?;
    while !trainer.finished() {
        let stats = trainer.run_epoch(data)?;
        on_epoch(&stats);
    }
    Ok(trainer.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, Rotation};

    #[test]
    fn winner_count_examples() {
        assert_eq!(select_winners(&vec![0.0; 1000], 0.20).len(), 200);
        assert_eq!(select_winners(&[3.0, 1.0, 2.0], 0.34), vec![1]);
        assert_eq!(select_winners(&[3.0, 1.0, 2.0], 1.0), vec![0, 1, 2]);
        assert_eq!(winner_count(10, 0.01), 1);
        assert_eq!(winner_count(100, 0.29), 29);
    }

    #[test]
    fn ties_prefer_lower_indices() {
        assert_eq!(select_winners(&[1.0, 0.5, 1.0, 1.0, 0.5], 0.6), vec![0, 1, 4]);
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = TrainConfig::default();
        assert_eq!((cfg.alpha, cfg.effective_beta()), (0.20, 0.01));
        assert_eq!((cfg.weights.translation, cfg.weights.rotation), (5.0, 2.0));
        assert_eq!(
            (cfg.batch_size, cfg.epochs, cfg.n_lr_decay, cfg.mc_samples),
            (4, 500, 50, 1000)
        );
        assert_eq!(cfg.lr0, 1e-4);
        assert_eq!(
            TrainConfig {
                mode: TrainMode::Elbo,
                ..cfg.clone()
            }
            .effective_beta(),
            1.0
        );
        assert_eq!(
            TrainConfig {
                mode: TrainMode::Ablation,
                ..cfg.clone()
            }
            .effective_beta(),
            0.0
        );
        let bad = TrainConfig {
            alpha: 0.0,
            batch_size: 0,
            ..cfg
        };
        let err = bad.validate().unwrap_err();
        assert_eq!(err.problems.len(), 2);
        assert!(err.problems[0].starts_with("alpha"));
        assert!(err.problems[1].starts_with("batch_size"));
    }

    fn tiny_model(mode: RegressorMode, seed: u64) -> PoseRegressor {
        let arch = Architecture {
            obs_dim: 5,
            latent_dim: 3,
            encoder_hidden: vec![7],
            posemap_width: 8,
            n_layers: 1,
        };
        PoseRegressor::new(&arch, SceneBounds::new([-1.0; 3], [1.0; 3]).unwrap(), mode, seed).unwrap()
    }

    fn sample() -> LabeledSample {
        LabeledSample {
            obs: vec![0.3, -0.2, 0.5, 0.1, -0.4],
            pose: Pose::new([0.2, -0.1, 0.3], Rotation::about_x(0.4)),
        }
    }

    #[test]
    fn ablation_loss_is_zero_at_the_label() {
        let model = tiny_model(RegressorMode::Ablation, 1);
        let obs = sample().obs;
        let pred = model.predict_posterior(&obs, 1, 0).unwrap().poses[0];
        let cfg = TrainConfig {
            mode: TrainMode::Ablation,
            ..TrainConfig::default()
        };
        let (loss, grad) = per_image_loss(&model, &LabeledSample { obs, pose: pred }, &cfg, 0).unwrap();
        assert!(loss.total.abs() < 1e-12);
        assert_eq!(loss.kl, 0.0);
        assert!(grad.encoder.flatten().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn full_alpha_matches_the_elbo_term() {
        let model = tiny_model(RegressorMode::Variational, 2);
        let s = sample();
        let wta = TrainConfig {
            alpha: 1.0,
            beta: Some(1.0),
            mc_samples: 64,
            ..TrainConfig::default()
        };
        let elbo = TrainConfig {
            mode: TrainMode::Elbo,
            mc_samples: 64,
            ..TrainConfig::default()
        };
        let (a, ga) = per_image_loss(&model, &s, &wta, 5).unwrap();
        let (b, gb) = per_image_loss(&model, &s, &elbo, 5).unwrap();
        assert_eq!(a.total, b.total);
        assert_eq!(ga, gb);
        let zero_beta = TrainConfig {
            alpha: 1.0,
            beta: Some(0.0),
            mc_samples: 64,
            ..TrainConfig::default()
        };
        let (c, _) = per_image_loss(&model, &s, &zero_beta, 5).unwrap();
        assert_eq!(c.total, c.mean_error);
    }

    #[test]
    fn selected_error_never_exceeds_mean_error() {
        let model = tiny_model(RegressorMode::Variational, 3);
        let s = sample();
        for alpha in [0.001, 0.05, 0.2, 0.5, 0.99] {
            let cfg = TrainConfig {
                alpha,
                mc_samples: 100,
                ..TrainConfig::default()
            };
            let (loss, _) = per_image_loss(&model, &s, &cfg, 9).unwrap();
            assert!(loss.selected_error <= loss.mean_error + 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data: Vec<LabeledSample> = (0..6)
            .map(|i| LabeledSample {
                obs: (0..5).map(|k| ((i * 5 + k) as f64 * 0.37).sin()).collect(),
                pose: Pose::new([0.1 * i as f64, -0.2, 0.3], Rotation::about_z(i as f64)),
            })
            .collect();
        let cfg = TrainConfig {
            mc_samples: 20,
            epochs: 3,
            lr0: 1e-3,
            ..TrainConfig::default()
        };
        let run = || {
            let mut t = Trainer::new(tiny_model(RegressorMode::Variational, init_seed(&cfg)), cfg.clone()).unwrap();
            let stats: Vec<_> = (0..3).map(|_| t.run_epoch(&data).unwrap()).collect();
            (t.model, stats)
        };
        let (m1, s1) = run();
        let (m2, s2) = run();
        assert_eq!(m1, m2);
        assert_eq!(s1, s2);
        assert!(s1.iter().all(|s| s.loss.is_finite()));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let mut t = Trainer::new(tiny_model(RegressorMode::Variational, 0), TrainConfig::default()).unwrap();
        assert_eq!(t.run_epoch(&[]).unwrap_err(), TrainError::EmptyDataset);
    }
}
