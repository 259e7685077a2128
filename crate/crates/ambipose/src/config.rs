//! Training configuration files and flag overlays.
//!
//! Settings are layered: built-in defaults, then the JSON config file, then
//! command-line flags. Every layer is a [`TrainOverlay`] whose `None` fields
//! leave the value underneath untouched.

use std::fs;
use std::path::{Path, PathBuf};

use ambipose_core::geometry::PoseDistanceWeights;
use ambipose_core::model::Architecture;
use ambipose_core::trainer::{TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverlay {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lambda_t: Option<f64>,
    pub lambda_r: Option<f64>,
    pub mc_samples: Option<usize>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub lr0: Option<f64>,
    pub n_lr_decay: Option<usize>,
    pub weight_decay: Option<f64>,
    pub mode: Option<TrainMode>,
    pub seed: Option<u64>,
}

impl TrainOverlay {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        set!(
            alpha,
            mc_samples,
            batch_size,
            epochs,
            lr0,
            n_lr_decay,
            weight_decay,
            mode,
            seed
        );
        if self.beta.is_some() {
            cfg.beta = self.beta;
        }
        let w = PoseDistanceWeights {
            translation: self.lambda_t.unwrap_or(cfg.weights.translation),
            rotation: self.lambda_r.unwrap_or(cfg.weights.rotation),
        };
        cfg.weights = w;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchOverlay {
    pub latent_dim: Option<usize>,
    pub n_layers: Option<usize>,
    pub posemap_width: Option<usize>,
    pub encoder_hidden: Option<Vec<usize>>,
}

impl ArchOverlay {
    pub fn apply(&self, arch: &mut Architecture) {
        if let Some(d) = self.latent_dim {
            arch.latent_dim = d;
        }
        if let Some(n) = self.n_layers {
            arch.n_layers = n;
        }
        if let Some(w) = self.posemap_width {
            arch.posemap_width = w;
        }
        if let Some(h) = &self.encoder_hidden {
            arch.encoder_hidden = h.clone();
        }
    }
}

/// Contents of a training config file: an optional `dataset` path, an
/// optional `architecture` object and top-level training keys. Unknown keys
/// are rejected.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainFile {
    pub dataset: Option<PathBuf>,
    pub train: TrainOverlay,
    pub architecture: ArchOverlay,
}

impl TrainFile {
    pub fn parse(text: &str) -> std::result::Result<Self, serde_json::Error> {
        let mut map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(text)?;
        let mut take = |key: &str| map.remove(key).filter(|v| !v.is_null());
        let dataset = take("dataset").map(serde_json::from_value).transpose()?;
        let architecture = take("architecture")
            .map(serde_json::from_value)
            .transpose()?
            .unwrap_or_default();
        let train = serde_json::from_value(serde_json::Value::Object(map))?;
        Ok(TrainFile {
            dataset,
            train,
            architecture,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
    }
}

/// Resolves the final training config and architecture from the three layers.
pub fn resolve(file: Option<&TrainFile>, flags: &TrainOverlay, obs_dim: usize) -> Result<(TrainConfig, Architecture)> {
    let mut cfg = TrainConfig::default();
    let mut arch = Architecture {
        obs_dim,
        ..Architecture::default()
    };
    if let Some(f) = file {
        f.train.apply(&mut cfg);
        f.architecture.apply(&mut arch);
    }
    flags.apply(&mut cfg);
    cfg.validate().map_err(|e| Error::Invalid(e.to_string()))?;
    arch.validate()
        .map_err(|e| Error::Invalid(format!("invalid architecture: {e}")))?;
    Ok((cfg, arch))
}
