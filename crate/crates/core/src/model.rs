//! Encoder / pose-map pair.
//!
//! The encoder maps an observation to a diagonal Gaussian `N(μ, diag σ²)`
//! over a `d`-dimensional latent space; the pose map sends each latent
//! sample to a translation (through a sigmoid and the scene's metric box)
//! and a 6D rotation. Drawing many latent samples and decoding them gives a
//! sample-based pose posterior.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::diffnet::{Activation, LayerShape, Matrix, NetError, Network};
use crate::geometry::{GeometryError, GramSchmidt, Pose, Rotation6D, DEGENERACY_EPS};
use crate::{math, seed};

pub const LOG_VAR_MIN: f64 = -20.0;
pub const LOG_VAR_MAX: f64 = 20.0;
/// Magnitude of the one-shot perturbation applied to a degenerate 6D output.
pub const DEGENERACY_NUDGE: f64 = 1e-8;
/// Default number of Monte-Carlo samples representing a posterior.
pub const DEFAULT_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("rotation recovery failed: {0}")]
    Geometry(#[from] GeometryError),
    #[error("invalid scene bounds on axis {0}")]
    Bounds(usize),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("architecture is inconsistent: {0}")]
    Architecture(&'static str),
}

/// Axis-aligned metric box the translation head maps into.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SceneBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl SceneBounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self, ModelError> {
        let b = SceneBounds { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for axis in 0..3 {
            if !(self.min[axis] < self.max[axis]) || !self.min[axis].is_finite() || !self.max[axis].is_finite() {
                return Err(ModelError::Bounds(axis));
            }
        }
        Ok(())
    }

    pub fn contains(&self, t: &[f64; 3]) -> bool {
        (0..3).all(|i| t[i] >= self.min[i] && t[i] <= self.max[i])
    }

    pub fn span(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum RegressorMode {
    /// Full Gaussian latent posterior.
    Variational,
    /// Single-point encoder: the variance head is ignored and every sample
    /// equals the mean.
    Ablation,
}

/// Layer sizes of the two networks.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Architecture {
    pub obs_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub posemap_width: usize,
    /// Hidden `width → width` layers of the pose map after the first.
    pub n_layers: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            obs_dim: crate::scenes::OBS_DIM,
            latent_dim: 16,
            encoder_hidden: vec![256, 256],
            posemap_width: 128,
            n_layers: 3,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.obs_dim == 0 {
            return Err(ModelError::Architecture("obs_dim must be positive"));
        }
        if self.latent_dim == 0 {
            return Err(ModelError::Architecture("latent_dim must be positive"));
        }
        if self.posemap_width == 0 || self.encoder_hidden.contains(&0) {
            return Err(ModelError::Architecture("layer widths must be positive"));
        }
        Ok(())
    }

    /// `obs → hidden… → 2d`, ReLU between layers, linear head.
    pub fn encoder_shapes(&self) -> Vec<LayerShape> {
        let mut dims = vec![self.obs_dim];
        dims.extend_from_slice(&self.encoder_hidden);
        dims.push(2 * self.latent_dim);
        chain(&dims)
    }

    /// `d → w (→ w)×n_layers → 9`, ReLU between layers, linear head.
    pub fn posemap_shapes(&self) -> Vec<LayerShape> {
        let mut dims = vec![self.latent_dim, self.posemap_width];
        dims.extend(core::iter::repeat_n(self.posemap_width, self.n_layers));
        dims.push(POSE_OUTPUTS);
        chain(&dims)
    }
}

fn chain(dims: &[usize]) -> Vec<LayerShape> {
    let last = dims.len() - 2;
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| LayerShape {
            input: w[0],
            output: w[1],
            activation: if i == last {
                Activation::Linear
            } else {
                Activation::Relu
            },
        })
        .collect()
}

/// Raw pose-map outputs: three translation logits and a 6D rotation.
pub const POSE_OUTPUTS: usize = 9;

/// Diagonal Gaussian over the latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLatent {
    pub mean: Vec<f64>,
    /// `log σ²`, clamped to `[-20, 20]`; `-∞` for a point mass.
    pub log_var: Vec<f64>,
}

impl GaussianLatent {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Self {
        assert_eq!(mean.len(), log_var.len(), "latent mean/log-variance length");
        let log_var = log_var.into_iter().map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)).collect();
        GaussianLatent { mean, log_var }
    }

    /// A point mass at `mean` (σ = 0).
    pub fn point(mean: Vec<f64>) -> Self {
        let log_var = vec![f64::NEG_INFINITY; mean.len()];
        GaussianLatent { mean, log_var }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_point(&self) -> bool {
        self.log_var.iter().all(|v| *v == f64::NEG_INFINITY)
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| math::exp(0.5 * lv)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub z: Vec<f64>,
}

/// Monte-Carlo representation of one pose posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSampleSet {
    pub poses: Vec<Pose>,
    pub seed: u64,
}

impl PoseSampleSet {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Standard-normal noise, one row per sample. Row `j` is drawn from its own
/// ChaCha stream `j` so any subset of rows can be regenerated independently.
pub fn latent_noise(seed: u64, count: usize, dim: usize) -> Matrix {
    let mut out = Matrix::zeros(count, dim);
    let mut rng: ChaCha8Rng = seed::rng(seed);
    for j in 0..count {
        rng.set_stream(j as u64);
        rng.set_word_pos(0);
        for v in out.row_mut(j) {
            *v = rng.sample(StandardNormal);
        }
    }
    out
}

/// Reparameterized samples `z_j = μ + σ ⊙ ε_j`.
pub fn sample_latent(g: &GaussianLatent, count: usize, seed: u64) -> Vec<LatentSample> {
    let z = reparameterize(g, &latent_noise(seed, count, g.dim()));
    (0..count).map(|j| LatentSample { z: z.row(j).to_vec() }).collect()
}

pub(crate) fn reparameterize(g: &GaussianLatent, noise: &Matrix) -> Matrix {
    let sd = g.std_dev();
    let mut z = noise.clone();
    for j in 0..z.rows {
        for ((v, m), s) in z.row_mut(j).iter_mut().zip(&g.mean).zip(&sd) {
            *v = if *s == 0.0 { *m } else { m + s * *v };
        }
    }
    z
}

/// `½ Σ (μ² + σ² − 1 − log σ²)`.
pub fn kl_to_standard_normal(g: &GaussianLatent) -> f64 {
    g.mean
        .iter()
        .zip(&g.log_var)
        .map(|(m, lv)| 0.5 * (m * m + math::exp(*lv) - 1.0 - lv))
        .sum()
}

/// Gradient of [`kl_to_standard_normal`] with respect to `μ` and `log σ²`.
pub fn kl_gradient(g: &GaussianLatent) -> (Vec<f64>, Vec<f64>) {
    let d_mean = g.mean.clone();
    let d_log_var = g.log_var.iter().map(|lv| 0.5 * (math::exp(*lv) - 1.0)).collect();
    (d_mean, d_log_var)
}

/// Everything needed to pull a pose gradient back to the raw 9 outputs.
#[derive(Debug, Clone, Copy)]
pub struct DecodeTrace {
    gram_schmidt: GramSchmidt,
    translation_slope: [f64; 3],
}

impl DecodeTrace {
    /// Maps `(dL/dt, dL/dR)` to `dL/du` for the raw outputs `u`.
    pub fn backward(&self, d_translation: &[f64; 3], d_rotation: &[f64; 9]) -> [f64; POSE_OUTPUTS] {
        let g6 = self.gram_schmidt.backward(d_rotation);
        let mut out = [0.0; POSE_OUTPUTS];
        for i in 0..3 {
            out[i] = d_translation[i] * self.translation_slope[i];
        }
        out[3..].copy_from_slice(&g6);
        out
    }
}

const SIGMOID_FLOOR: f64 = 1e-12;

/// Maps raw outputs `u` to a pose: `t = min + sigmoid(u[0..3]) ⊙ (max − min)`
/// and `R = rotation_from_6d(u[3..9])`.
///
/// A degenerate 6D block is nudged by `1e-8` on the offending entries and
/// retried once.
pub fn decode_raw(bounds: &SceneBounds, u: &[f64]) -> Result<(Pose, DecodeTrace), ModelError> {
    debug_assert_eq!(u.len(), POSE_OUTPUTS);
    let mut translation = [0.0; 3];
    let mut slope = [0.0; 3];
    for axis in 0..3 {
        let raw = math::sigmoid(u[axis]);
        let s = raw.clamp(SIGMOID_FLOOR, 1.0 - SIGMOID_FLOOR);
        translation[axis] = bounds.min[axis] + s * bounds.span(axis);
        slope[axis] = if s == raw {
            s * (1.0 - s) * bounds.span(axis)
        } else {
            0.0
        };
    }
    let mut r6 = Rotation6D([u[3], u[4], u[5], u[6], u[7], u[8]]);
    let gs = match GramSchmidt::new(&r6) {
        Ok(gs) => gs,
        Err(GeometryError::Degenerate6D(_)) => {
            nudge_degenerate(&mut r6);
            GramSchmidt::new(&r6)?
        }
        Err(e) => return Err(e.into()),
    };
    let pose = Pose {
        translation,
        rotation: gs.rotation,
    };
    Ok((
        pose,
        DecodeTrace {
            gram_schmidt: gs,
            translation_slope: slope,
        },
    ))
}

fn nudge_degenerate(r: &mut Rotation6D) {
    let u = [r.0[0], r.0[1], r.0[2]];
    let u_norm = math::sqrt(u.iter().map(|v| v * v).sum());
    if !(u_norm >= DEGENERACY_EPS) {
        r.0[0] += DEGENERACY_NUDGE;
        return;
    }
    // Second block zero or parallel to the first: push it along the axis
    // least aligned with the first block.
    let axis = (0..3)
        .min_by(|&a, &b| {
            u[a].abs()
                .partial_cmp(&u[b].abs())
                .unwrap_or(core::cmp::Ordering::Equal)
        })
        .unwrap_or(0);
    r.0[3 + axis] += DEGENERACY_NUDGE;
}

/// Encoder, pose map and the metric box of the scene they were trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseRegressor {
    pub encoder: Network,
    pub posemap: Network,
    pub bounds: SceneBounds,
    pub latent_dim: usize,
    pub mode: RegressorMode,
}

impl PoseRegressor {
    /// Randomly initialized model; weights are a pure function of `init_seed`.
    pub fn new(
        arch: &Architecture,
        bounds: SceneBounds,
        mode: RegressorMode,
        init_seed: u64,
    ) -> Result<Self, ModelError> {
        arch.validate()?;
        bounds.validate()?;
        let mut rng = seed::rng(init_seed);
        let encoder = Network::init(&arch.encoder_shapes(), &mut rng)?;
        let posemap = Network::init(&arch.posemap_shapes(), &mut rng)?;
        Self::from_parts(encoder, posemap, bounds, mode)
    }

    pub fn from_parts(
        encoder: Network,
        posemap: Network,
        bounds: SceneBounds,
        mode: RegressorMode,
    ) -> Result<Self, ModelError> {
        let latent_dim = posemap.input_dim();
        if encoder.output_dim() != 2 * latent_dim {
            return Err(ModelError::Architecture(
                "encoder output must be twice the latent dimension",
            ));
        }
        if posemap.output_dim() != POSE_OUTPUTS {
            return Err(ModelError::Architecture("pose map must emit 9 values"));
        }
        bounds.validate()?;
        Ok(PoseRegressor {
            encoder,
            posemap,
            bounds,
            latent_dim,
            mode,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn encode(&self, obs: &[f64]) -> Result<GaussianLatent, ModelError> {
        let (out, _) = self.encoder.forward(obs)?;
        Ok(self.latent_from_output(&out))
    }

    pub(crate) fn latent_from_output(&self, out: &[f64]) -> GaussianLatent {
        let d = self.latent_dim;
        let mean = out[..d].to_vec();
        match self.mode {
            RegressorMode::Variational => GaussianLatent::new(mean, out[d..2 * d].to_vec()),
            RegressorMode::Ablation => GaussianLatent::point(mean),
        }
    }

    pub fn decode(&self, z: &LatentSample) -> Result<Pose, ModelError> {
        let u = self.posemap.predict_batch(&Matrix::row_vector(&z.z))?;
        Ok(decode_raw(&self.bounds, &u.data)?.0)
    }

    /// Decodes every row of a latent batch.
    pub fn decode_batch(&self, z: &Matrix) -> Result<Vec<Pose>, ModelError> {
        let u = self.posemap.predict_batch(z)?;
        (0..u.rows)
            .map(|j| decode_raw(&self.bounds, u.row(j)).map(|(p, _)| p))
            .collect()
    }

    /// `count` pose samples for `obs`: encode, draw reparameterized latent
    /// samples, decode each.
    pub fn predict_posterior(&self, obs: &[f64], count: usize, seed: u64) -> Result<PoseSampleSet, ModelError> {
        if count == 0 {
            return Err(ModelError::NoSamples);
        }
        let latent = self.encode(obs)?;
        let poses = if latent.is_point() {
            let pose = self.decode(&LatentSample { z: latent.mean.clone() })?;
            vec![pose; count]
        } else {
            let z = reparameterize(&latent, &latent_noise(seed, count, self.latent_dim));
            self.decode_batch(&z)?
        };
        Ok(PoseSampleSet { poses, seed })
    }
}
