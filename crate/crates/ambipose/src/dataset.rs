//! Dataset directories: `manifest.json` plus `train.bin` / `test.bin`.
//!
//! Each record is `obs_dim + 7` little-endian `f32` values: the observation,
//! the camera position, and the orientation quaternion `(w, x, y, z)` with
//! `w ≥ 0`.

use std::fs;
use std::path::Path;

use ambipose_core::geometry::{Pose, Rotation};
use ambipose_core::scenes::{Dataset, LabeledSample, SceneSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const TRAIN_FILE: &str = "train.bin";
pub const TEST_FILE: &str = "test.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub scene: SceneSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub obs_dim: usize,
    pub seed: u64,
    pub train_seed: u64,
    pub test_seed: u64,
}

impl Manifest {
    pub fn for_dataset(ds: &Dataset) -> Self {
        Manifest {
            format_version: FORMAT_VERSION,
            scene: ds.spec.clone(),
            n_train: ds.train.len(),
            n_test: ds.test.len(),
            obs_dim: ds.spec.obs_dim(),
            seed: ds.seed,
            train_seed: ds.train_seed(),
            test_seed: ds.test_seed(),
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "scene {} (k={}, eta={}), {} train / {} test, obs_dim {}, seed {}",
            self.scene.name,
            self.scene.symmetry_order,
            self.scene.distinguishing_strength,
            self.n_train,
            self.n_test,
            self.obs_dim,
            self.seed
        )
    }
}

pub fn encode_records(samples: &[LabeledSample]) -> Vec<u8> {
    let mut out = Vec::new();
    for s in samples {
        let q = s.pose.rotation.to_quaternion();
        let values = s.obs.iter().chain(&s.pose.translation).chain(&q);
        for v in values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_records(bytes: &[u8], obs_dim: usize, count: usize, path: &Path) -> Result<Vec<LabeledSample>> {
    let width = obs_dim + 7;
    if bytes.len() != count * width * 4 {
        return Err(Error::format(
            path,
            format!(
                "expected {count} records of {width} f32 values, found {} bytes",
                bytes.len()
            ),
        ));
    }
    let floats: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    floats
        .chunks_exact(width)
        .map(|r| {
            let t = [r[obs_dim], r[obs_dim + 1], r[obs_dim + 2]];
            let q = [r[obs_dim + 3], r[obs_dim + 4], r[obs_dim + 5], r[obs_dim + 6]];
            if !q.iter().chain(&t).all(|v| v.is_finite()) || q.iter().all(|v| *v == 0.0) {
                return Err(Error::format(path, "record holds an invalid pose"));
            }
            Ok(LabeledSample {
                obs: r[..obs_dim].to_vec(),
                pose: Pose::new(t, Rotation::from_quaternion(q)),
            })
        })
        .collect()
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let manifest = Manifest::for_dataset(ds);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = dir.join(MANIFEST);
    fs::write(&path, json + "\n").map_err(Error::io(&path))?;
    for (name, split) in [(TRAIN_FILE, &ds.train), (TEST_FILE, &ds.test)] {
        let path = dir.join(name);
        fs::write(&path, encode_records(split)).map_err(Error::io(&path))?;
    }
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::format(
            &path,
            format!("unsupported format_version {}", m.format_version),
        ));
    }
    if m.obs_dim != m.scene.obs_dim() {
        return Err(Error::format(
            &path,
            format!("obs_dim {} does not match the scene ({})", m.obs_dim, m.scene.obs_dim()),
        ));
    }
    m.scene.validate()?;
    Ok(m)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    let mut splits = Vec::with_capacity(2);
    for (name, count) in [(TRAIN_FILE, m.n_train), (TEST_FILE, m.n_test)] {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(Error::io(&path))?;
        splits.push(decode_records(&bytes, m.obs_dim, count, &path)?);
    }
    let test = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    Ok(Dataset {
        spec: m.scene,
        seed: m.seed,
        train,
        test,
    })
}
