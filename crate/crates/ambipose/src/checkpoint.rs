//! Binary model checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "VAPR"  u32 version  u8 flags (bit 0: optimizer state follows)
//! u32 len + UTF-8 scene name
//! f64 x3 bounds min, f64 x3 bounds max, u32 latent dim, u8 mode
//! encoder, pose map:  u32 layers, then per layer u32 in, u32 out, u8 activation,
//!                     then per layer weights (out x in, row-major) and biases as f64
//! optimizer state:    u64 epoch, u32 len + UTF-8 JSON training config,
//!                     per network: f64 x5 Adam config, u64 step, first and second moments
//! ```

use std::fs;
use std::path::Path;

use ambipose_core::diffnet::{
    Activation, AdamConfig, AdamState, DenseLayer, GradientTape, LayerGradient, Matrix, Network,
};
use ambipose_core::model::{PoseRegressor, RegressorMode, SceneBounds};
use ambipose_core::trainer::{TrainConfig, Trainer};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VAPR";
pub const VERSION: u32 = 1;
const FLAG_OPTIMIZER: u8 = 1;

/// A model plus the name of the scene it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub scene: String,
    pub model: PoseRegressor,
    pub state: Option<TrainerState>,
}

/// Everything needed to continue training where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub epoch: usize,
    pub config: TrainConfig,
    pub encoder_opt: AdamState,
    pub posemap_opt: AdamState,
}

impl Checkpoint {
    pub fn from_trainer(scene: &str, t: &Trainer) -> Self {
        Checkpoint {
            scene: scene.to_string(),
            model: t.model.clone(),
            state: Some(TrainerState {
                epoch: t.epoch,
                config: t.cfg.clone(),
                encoder_opt: t.encoder_opt.clone(),
                posemap_opt: t.posemap_opt.clone(),
            }),
        }
    }

    pub fn into_trainer(self) -> Option<Trainer> {
        let s = self.state?;
        Some(Trainer {
            model: self.model,
            cfg: s.config,
            encoder_opt: s.encoder_opt,
            posemap_opt: s.posemap_opt,
            epoch: s.epoch,
        })
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn network(&mut self, net: &Network) {
        self.u32(net.layers().len());
        for l in net.layers() {
            self.u32(l.input_dim());
            self.u32(l.output_dim());
            self.u8(l.activation.tag());
        }
        for l in net.layers() {
            self.f64s(&l.weights.data);
            self.f64s(&l.bias);
        }
    }
    fn tape(&mut self, t: &GradientTape) {
        for l in &t.layers {
            self.f64s(&l.weights.data);
            self.f64s(&l.bias);
        }
    }
    fn adam(&mut self, a: &AdamState) {
        let c = a.config;
        self.f64s(&[c.lr, c.beta1, c.beta2, c.eps, c.weight_decay]);
        self.u64(a.step);
        self.tape(&a.first);
        self.tape(&a.second);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, "checkpoint is truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::format(self.path, "size overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(self.path, "invalid UTF-8 string"))
    }
    fn network(&mut self) -> Result<Network> {
        let n = self.u32()?;
        let mut shapes = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let (input, output) = (self.u32()?, self.u32()?);
            let act =
                Activation::from_tag(self.u8()?).ok_or_else(|| Error::format(self.path, "unknown activation tag"))?;
            shapes.push((input, output, act));
        }
        let mut layers = Vec::with_capacity(n);
        for (input, output, activation) in shapes {
            let weights = Matrix::from_vec(output, input, self.f64s(input * output)?);
            let bias = self.f64s(output)?;
            layers.push(DenseLayer {
                weights,
                bias,
                activation,
            });
        }
        Network::from_layers(layers).map_err(|e| Error::format(self.path, e.to_string()))
    }
    fn tape(&mut self, net: &Network) -> Result<GradientTape> {
        let mut layers = Vec::new();
        for l in net.layers() {
            let weights = Matrix::from_vec(
                l.output_dim(),
                l.input_dim(),
                self.f64s(l.input_dim() * l.output_dim())?,
            );
            layers.push(LayerGradient {
                weights,
                bias: self.f64s(l.output_dim())?,
            });
        }
        Ok(GradientTape { layers })
    }
    fn adam(&mut self, net: &Network) -> Result<AdamState> {
        let c = self.f64s(5)?;
        let config = AdamConfig {
            lr: c[0],
            beta1: c[1],
            beta2: c[2],
            eps: c[3],
            weight_decay: c[4],
        };
        let step = self.u64()?;
        Ok(AdamState {
            config,
            step,
            first: self.tape(net)?,
            second: self.tape(net)?,
        })
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    w.u8(if ckpt.state.is_some() { FLAG_OPTIMIZER } else { 0 });
    w.str(&ckpt.scene);
    let m = &ckpt.model;
    w.f64s(&m.bounds.min);
    w.f64s(&m.bounds.max);
    w.u32(m.latent_dim);
    w.u8(match m.mode {
        RegressorMode::Variational => 0,
        RegressorMode::Ablation => 1,
    });
    w.network(&m.encoder);
    w.network(&m.posemap);
    if let Some(s) = &ckpt.state {
        w.u64(s.epoch as u64);
        w.str(&serde_json::to_string(&s.config).expect("config serializes"));
        w.adam(&s.encoder_opt);
        w.adam(&s.posemap_opt);
    }
    w.0
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let flags = r.u8()?;
    let scene = r.str()?;
    let min: [f64; 3] = r.f64s(3)?.try_into().expect("3 values");
    let max: [f64; 3] = r.f64s(3)?.try_into().expect("3 values");
    let bounds = SceneBounds::new(min, max).map_err(|e| Error::format(path, e.to_string()))?;
    let latent_dim = r.u32()?;
    let mode = match r.u8()? {
        0 => RegressorMode::Variational,
        1 => RegressorMode::Ablation,
        t => return Err(Error::format(path, format!("unknown mode tag {t}"))),
    };
    let encoder = r.network()?;
    let posemap = r.network()?;
    let model =
        PoseRegressor::from_parts(encoder, posemap, bounds, mode).map_err(|e| Error::format(path, e.to_string()))?;
    if model.latent_dim != latent_dim {
        return Err(Error::format(path, "latent dimension disagrees with the pose map"));
    }
    let state = if flags & FLAG_OPTIMIZER != 0 {
        let epoch = r.u64()? as usize;
        let config: TrainConfig = serde_json::from_str(&r.str()?).map_err(|e| Error::format(path, e.to_string()))?;
        let encoder_opt = r.adam(&model.encoder)?;
        let posemap_opt = r.adam(&model.posemap)?;
        Some(TrainerState {
            epoch,
            config,
            encoder_opt,
            posemap_opt,
        })
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after checkpoint"));
    }
    Ok(Checkpoint { scene, model, state })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, encode(ckpt)).map_err(Error::io(path))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode(&bytes, path)
}
