//! Procedural ambiguous scenes.
//!
//! A camera circles a cyclically symmetric arrangement of landmarks while
//! looking at the scene centre. Each observation is a fixed-length response
//! vector: azimuth-binned landmark responses (inverse range and elevation)
//! followed by identity channels that tell landmarks apart. The identity
//! channels are scaled by the scene's distinguishing strength `η`; at
//! `η = 0` all poses related by the symmetry group render the same
//! observation, so the pose posterior has exactly `k` equally likely modes.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geometry::{cross3, norm3, Pose, Rotation};
use crate::model::SceneBounds;
use crate::{math, seed};

/// Azimuth bins per response channel.
pub const BEARING_BINS: usize = 24;
/// Coarse azimuth bins of the identity channels.
pub const IDENTITY_BINS: usize = 4;
/// Landmark tags are folded into this many identity slots.
pub const IDENTITY_SLOTS: usize = 4;
pub const OBS_DIM: usize = 2 * BEARING_BINS + IDENTITY_BINS * IDENTITY_SLOTS;
/// Offset of the identity channels within an observation.
pub const IDENTITY_OFFSET: usize = 2 * BEARING_BINS;

const HALF_FOV_AZ: f64 = 50.0 * PI / 180.0;
const HALF_FOV_EL: f64 = 40.0 * PI / 180.0;
/// Width of the linear visibility fall-off at the field-of-view border.
const FOV_TAPER: f64 = 5.0 * PI / 180.0;
const IDENTITY_GAIN: f64 = 0.05;

/// Minimum pose distance (default weights) between distinct oracle modes of
/// the built-in scenes.
pub const MODE_SEPARATION_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("unknown scene '{0}'")]
    UnknownScene(String),
    #[error("invalid scene spec: {0}")]
    Invalid(&'static str),
    #[error("pose translation {0:?} lies outside the scene bounds")]
    OutOfBounds([f64; 3]),
    #[error("sample counts must be at least 1")]
    EmptySplit,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Landmark {
    pub position: [f64; 3],
    /// Identity of the physical object the point belongs to.
    pub tag: u32,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SceneSpec {
    pub name: String,
    /// Order `k` of the cyclic symmetry about the vertical axis.
    pub symmetry_order: u32,
    pub bounds: SceneBounds,
    pub ring_radius: f64,
    pub camera_height: f64,
    pub landmarks: Vec<Landmark>,
    pub noise_std: f64,
    /// `η ∈ [0, 1]`: 0 is perfectly ambiguous, 1 fully distinguishable.
    pub distinguishing_strength: f64,
    pub radius_jitter: f64,
    pub height_jitter: f64,
    /// Fraction of the yaw spacing used as a random offset per pose.
    pub yaw_jitter: f64,
}

pub const BUILTIN_SCENES: [&str; 4] = ["round_table", "dinner_table", "ceiling_grid", "unambiguous"];

fn ring(count: usize, radius: f64, z: f64, phase_deg: f64, tag: impl Fn(usize) -> u32) -> Vec<Landmark> {
    (0..count)
        .map(|j| {
            let a = phase_deg.to_radians() + TAU * j as f64 / count as f64;
            Landmark {
                position: [radius * math::cos(a), radius * math::sin(a), z],
                tag: tag(j),
            }
        })
        .collect()
}

impl SceneSpec {
    /// One of the built-in scenes.
    pub fn builtin(name: &str) -> Result<Self, SceneError> {
        let bounds = SceneBounds {
            min: [-1.3, -1.3, 0.3],
            max: [1.3, 1.3, 0.9],
        };
        let base = |name: &str, k: u32, landmarks: Vec<Landmark>, eta: f64| SceneSpec {
            name: name.to_string(),
            symmetry_order: k,
            bounds,
            ring_radius: 1.0,
            camera_height: 0.6,
            landmarks,
            noise_std: 0.002,
            distinguishing_strength: eta,
            radius_jitter: 0.01,
            height_jitter: 0.01,
            yaw_jitter: 1.0,
        };
        let spec = match name {
            "round_table" => {
                // Four legs (foot and top) under a rim of eight points.
                let mut l = ring(4, 0.35, 0.0, 45.0, |j| j as u32);
                l.extend(ring(4, 0.35, 0.7, 45.0, |j| j as u32));
                l.extend(ring(8, 0.5, 0.72, 22.5, |j| (j / 2) as u32));
                base(name, 4, l, 0.0)
            }
            "dinner_table" => {
                let mut l = Vec::new();
                for (t, (x, y)) in [(0.45, 0.25), (-0.45, 0.25), (-0.45, -0.25), (0.45, -0.25)]
                    .into_iter()
                    .enumerate()
                {
                    l.push(Landmark {
                        position: [x, y, 0.0],
                        tag: t as u32,
                    });
                    l.push(Landmark {
                        position: [x, y, 0.7],
                        tag: t as u32,
                    });
                }
                // Tags 0↔2 and 1↔3 swap under the half turn; the two chairs swap too.
                l.push(Landmark {
                    position: [0.75, 0.0, 0.45],
                    tag: 4,
                });
                l.push(Landmark {
                    position: [-0.75, 0.0, 0.45],
                    tag: 5,
                });
                base(name, 2, l, 0.0)
            }
            "ceiling_grid" => {
                let mut l = ring(6, 0.45, 0.0, 0.0, |j| j as u32);
                l.extend(ring(6, 0.25, 0.3, 30.0, |j| j as u32));
                base(name, 6, l, 0.0)
            }
            "unambiguous" => {
                let l = [
                    (0.0, 0.4, 0.0),
                    (70.0, 0.3, 0.5),
                    (150.0, 0.45, 0.2),
                    (230.0, 0.2, 0.7),
                    (300.0, 0.35, 0.1),
                ]
                .into_iter()
                .enumerate()
                .map(|(t, (a, r, z)): (usize, (f64, f64, f64))| {
                    let a = a.to_radians();
                    Landmark {
                        position: [r * math::cos(a), r * math::sin(a), z],
                        tag: t as u32,
                    }
                })
                .collect();
                base(name, 1, l, 1.0)
            }
            other => return Err(SceneError::UnknownScene(other.to_string())),
        };
        Ok(spec)
    }

    /// Length scale of the scene; metric thresholds are expressed relative to it.
    pub fn scale(&self) -> f64 {
        self.ring_radius
    }

    pub fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    pub fn with_distinguishing_strength(mut self, eta: f64) -> Self {
        self.distinguishing_strength = eta;
        self
    }

    /// Rotation generating the symmetry group.
    pub fn generator(&self) -> Rotation {
        Rotation::about_z(TAU / self.symmetry_order as f64)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.symmetry_order < 1 {
            return Err(SceneError::Invalid("symmetry_order must be at least 1"));
        }
        if !(self.ring_radius > 0.0) {
            return Err(SceneError::Invalid("ring_radius must be positive"));
        }
        if !(0.0..=1.0).contains(&self.distinguishing_strength) {
            return Err(SceneError::Invalid("distinguishing_strength must lie in [0, 1]"));
        }
        if !(self.noise_std >= 0.0) || !(self.radius_jitter >= 0.0) || !(self.height_jitter >= 0.0) {
            return Err(SceneError::Invalid("noise and jitter scales must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.yaw_jitter) {
            return Err(SceneError::Invalid("yaw_jitter must lie in [0, 1]"));
        }
        if self.bounds.validate().is_err() {
            return Err(SceneError::Invalid("bounds must satisfy min < max on every axis"));
        }
        let reach = self.ring_radius + self.radius_jitter;
        let lo = self.camera_height - self.height_jitter;
        let hi = self.camera_height + self.height_jitter;
        let b = &self.bounds;
        if reach >= b.max[0].min(-b.min[0]).min(b.max[1]).min(-b.min[1]) || lo <= b.min[2] || hi >= b.max[2] {
            return Err(SceneError::Invalid("camera ring does not fit inside the bounds"));
        }
        if self.distinguishing_strength == 0.0 && !self.layout_is_symmetric() {
            return Err(SceneError::Invalid(
                "landmark layout is not invariant under the symmetry group",
            ));
        }
        Ok(())
    }

    fn layout_is_symmetric(&self) -> bool {
        let g = self.generator();
        self.landmarks.iter().all(|l| {
            let p = g.apply(l.position);
            self.landmarks
                .iter()
                .any(|m| (0..3).all(|i| (m.position[i] - p[i]).abs() < 1e-9))
        })
    }
}

/// Camera at `(r cos yaw, r sin yaw, h)` looking at the origin, x right and
/// y down in the image.
pub fn ring_pose(yaw: f64, radius: f64, height: f64) -> Pose {
    let t = [radius * math::cos(yaw), radius * math::sin(yaw), height];
    let n = norm3(&t);
    let forward = [-t[0] / n, -t[1] / n, -t[2] / n];
    let right = cross3(&forward, &[0.0, 0.0, 1.0]);
    let rn = norm3(&right);
    let right = [right[0] / rn, right[1] / rn, right[2] / rn];
    let down = cross3(&forward, &right);
    Pose {
        translation: t,
        rotation: Rotation::from_columns(right, down, forward),
    }
}

#[inline]
fn visibility(angle: f64, half_fov: f64) -> f64 {
    ((half_fov - angle.abs()) / FOV_TAPER).clamp(0.0, 1.0)
}

#[inline]
fn bin_centre(i: usize, bins: usize) -> f64 {
    -HALF_FOV_AZ + 2.0 * HALF_FOV_AZ * (i as f64 + 0.5) / bins as f64
}

/// Renders the observation of `pose`, adding `N(0, noise_std²)` noise drawn
/// from `rng` (no draws are made when `noise_std` is zero).
pub fn render_observation<R: Rng + ?Sized>(spec: &SceneSpec, pose: &Pose, rng: &mut R) -> Result<Vec<f64>, SceneError> {
    if !spec.bounds.contains(&pose.translation) || !pose.is_finite() {
        return Err(SceneError::OutOfBounds(pose.translation));
    }
    let mut obs = vec![0.0; OBS_DIM];
    let world_to_cam = pose.rotation.transpose();
    let fine_width = 2.0 * HALF_FOV_AZ / BEARING_BINS as f64;
    let coarse_width = 2.0 * HALF_FOV_AZ / IDENTITY_BINS as f64;
    let id_scale = spec.distinguishing_strength * IDENTITY_GAIN;
    for l in &spec.landmarks {
        let rel = [
            l.position[0] - pose.translation[0],
            l.position[1] - pose.translation[1],
            l.position[2] - pose.translation[2],
        ];
        let p = world_to_cam.apply(rel);
        if p[2] <= 1e-9 {
            continue;
        }
        let az = math::atan2(p[0], p[2]);
        let el = math::atan2(p[1], p[2]);
        let vis = visibility(az, HALF_FOV_AZ) * visibility(el, HALF_FOV_EL);
        if vis == 0.0 {
            continue;
        }
        let range = norm3(&p);
        let height = 0.5 + 0.5 * el / HALF_FOV_EL;
        for i in 0..BEARING_BINS {
            let d = (az - bin_centre(i, BEARING_BINS)) / fine_width;
            let k = vis * math::exp(-0.5 * d * d);
            obs[i] += k / range;
            obs[BEARING_BINS + i] += k * height;
        }
        let slot = l.tag as usize % IDENTITY_SLOTS;
        for b in 0..IDENTITY_BINS {
            let d = (az - bin_centre(b, IDENTITY_BINS)) / coarse_width;
            obs[IDENTITY_OFFSET + b * IDENTITY_SLOTS + slot] += id_scale * vis * math::exp(-0.5 * d * d);
        }
    }
    if spec.noise_std > 0.0 {
        for v in &mut obs {
            let e: f64 = rng.sample(StandardNormal);
            *v += spec.noise_std * e;
        }
    }
    Ok(obs)
}

/// `n` poses circling the scene: yaw `2π (i + jitter·uᵢ) / n`, with radius
/// and height perturbed uniformly within the spec's jitter.
pub fn sample_trajectory(spec: &SceneSpec, n: usize, seed: u64) -> Vec<Pose> {
    let mut rng = seed::rng(seed);
    (0..n)
        .map(|i| {
            let u: f64 = rng.random();
            let dr: f64 = rng.random_range(-1.0..1.0);
            let dh: f64 = rng.random_range(-1.0..1.0);
            let yaw = TAU * (i as f64 + spec.yaw_jitter * u) / n as f64;
            ring_pose(
                yaw,
                spec.ring_radius + spec.radius_jitter * dr,
                spec.camera_height + spec.height_jitter * dh,
            )
        })
        .collect()
}

/// The orbit of a pose under the scene's symmetry group; `modes[0]` is the
/// pose itself.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleModeSet {
    pub modes: Vec<Pose>,
}

impl OracleModeSet {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn truth(&self) -> &Pose {
        &self.modes[0]
    }
}

pub fn oracle_modes(spec: &SceneSpec, pose: &Pose) -> Result<OracleModeSet, SceneError> {
    if !spec.bounds.contains(&pose.translation) {
        return Err(SceneError::OutOfBounds(pose.translation));
    }
    let k = spec.symmetry_order.max(1);
    let modes = (0..k)
        .map(|j| {
            if j == 0 {
                *pose
            } else {
                pose.rotated_by(&Rotation::about_z(TAU * j as f64 / k as f64))
            }
        })
        .collect();
    Ok(OracleModeSet { modes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub obs: Vec<f64>,
    pub pose: Pose,
}

/// A generated scene with disjoint training and test trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SceneSpec,
    pub seed: u64,
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

impl Dataset {
    pub fn train_seed(&self) -> u64 {
        self.seed
    }

    pub fn test_seed(&self) -> u64 {
        self.seed ^ seed::TEST_SPLIT_MASK
    }
}

/// Rounds a pose to the precision of the on-disk record (f32 translation and
/// `w ≥ 0` quaternion).
pub fn quantize_pose(pose: &Pose) -> Pose {
    let q = pose.rotation.to_quaternion().map(|v| v as f32 as f64);
    Pose {
        translation: pose.translation.map(|v| v as f32 as f64),
        rotation: Rotation::from_quaternion(q),
    }
}

fn render_split(spec: &SceneSpec, n: usize, split_seed: u64) -> Result<Vec<LabeledSample>, SceneError> {
    sample_trajectory(spec, n, split_seed)
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let pose = quantize_pose(pose);
            let mut rng = seed::rng(seed::derive(split_seed, seed::purpose::RENDER_NOISE, i as u64));
            let obs = render_observation(spec, &pose, &mut rng)?;
            Ok(LabeledSample {
                obs: obs.into_iter().map(|v| v as f32 as f64).collect(),
                pose,
            })
        })
        .collect()
}

/// Renders both splits. Values are rounded to f32 so that writing and
/// reading the dataset is lossless.
pub fn generate_dataset(spec: &SceneSpec, n_train: usize, n_test: usize, seed: u64) -> Result<Dataset, SceneError> {
    if n_train == 0 || n_test == 0 {
        return Err(SceneError::EmptySplit);
    }
    spec.validate()?;
    let mut ds = Dataset {
        spec: spec.clone(),
        seed,
        train: Vec::new(),
        test: Vec::new(),
    };
    ds.train = render_split(spec, n_train, ds.train_seed())?;
    ds.test = render_split(spec, n_test, ds.test_seed())?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{geodesic_angle, pose_distance, PoseDistanceWeights};

    fn noiseless(name: &str) -> SceneSpec {
        SceneSpec {
            noise_std: 0.0,
            ..SceneSpec::builtin(name).unwrap()
        }
    }

    #[test]
    fn builtins_validate() {
        for name in BUILTIN_SCENES {
            let s = SceneSpec::builtin(name).unwrap();
            s.validate().unwrap();
            assert_eq!(s.obs_dim(), 64);
        }
        assert_eq!(SceneSpec::builtin("round_table").unwrap().symmetry_order, 4);
        assert_eq!(SceneSpec::builtin("dinner_table").unwrap().symmetry_order, 2);
        assert_eq!(SceneSpec::builtin("ceiling_grid").unwrap().symmetry_order, 6);
        assert!(matches!(
            SceneSpec::builtin("kitchen"),
            Err(SceneError::UnknownScene(_))
        ));
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let good = SceneSpec::builtin("round_table").unwrap();
        assert!(SceneSpec {
            symmetry_order: 0,
            ..good.clone()
        }
        .validate()
        .is_err());
        assert!(SceneSpec {
            ring_radius: 0.0,
            ..good.clone()
        }
        .validate()
        .is_err());
        assert!(SceneSpec {
            distinguishing_strength: 1.5,
            ..good.clone()
        }
        .validate()
        .is_err());
        assert!(SceneSpec {
            symmetry_order: 3,
            ..good.clone()
        }
        .validate()
        .is_err());
        assert!(SceneSpec {
            ring_radius: 2.0,
            ..good
        }
        .validate()
        .is_err());
    }

    #[test]
    fn symmetric_poses_render_identically() {
        let spec = noiseless("round_table");
        let mut rng = seed::rng(0);
        let pose = ring_pose(0.3, 1.0, 0.6);
        let a = render_observation(&spec, &pose, &mut rng).unwrap();
        let b = render_observation(&spec, &pose.rotated_by(&Rotation::about_z(PI / 2.0)), &mut rng).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(a[..IDENTITY_OFFSET].iter().any(|v| *v > 0.1));
        assert!(a[IDENTITY_OFFSET..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_channels_separate_symmetric_poses() {
        for name in ["round_table", "dinner_table", "ceiling_grid"] {
            let base = SceneSpec::builtin(name).unwrap();
            let spec = noiseless(name).with_distinguishing_strength(1.0);
            let mut rng = seed::rng(0);
            for pose in sample_trajectory(&spec, 64, 5) {
                let a = render_observation(&spec, &pose, &mut rng).unwrap();
                let modes = oracle_modes(&spec, &pose).unwrap();
                for other in &modes.modes[1..] {
                    let b = render_observation(&spec, other, &mut rng).unwrap();
                    let gap = a[IDENTITY_OFFSET..]
                        .iter()
                        .zip(&b[IDENTITY_OFFSET..])
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0, f64::max);
                    assert!(gap >= 10.0 * base.noise_std, "{name}: gap {gap}");
                }
            }
        }
    }

    #[test]
    fn noiseless_rendering_is_repeatable() {
        let spec = noiseless("dinner_table");
        let pose = ring_pose(1.1, 1.0, 0.6);
        let a = render_observation(&spec, &pose, &mut seed::rng(1)).unwrap();
        let b = render_observation(&spec, &pose, &mut seed::rng(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rendering_rejects_out_of_bounds() {
        let spec = SceneSpec::builtin("round_table").unwrap();
        let pose = ring_pose(0.0, 2.0, 0.6);
        assert!(matches!(
            render_observation(&spec, &pose, &mut seed::rng(0)),
            Err(SceneError::OutOfBounds(_))
        ));
    }

    #[test]
    fn jitter_free_trajectory_is_a_uniform_ring() {
        let spec = SceneSpec {
            radius_jitter: 0.0,
            height_jitter: 0.0,
            yaw_jitter: 0.0,
            ..SceneSpec::builtin("round_table").unwrap()
        };
        let poses = sample_trajectory(&spec, 4, 3);
        for (i, p) in poses.iter().enumerate() {
            let yaw = math::atan2(p.translation[1], p.translation[0]).rem_euclid(TAU);
            assert!((yaw - i as f64 * PI / 2.0).abs() < 1e-12);
            let z = p.rotation.column(2);
            let miss = norm3(&cross3(&p.translation, &z));
            assert!(miss < 1e-9);
            assert!(crate::geometry::dot3(&p.translation, &z) < 0.0);
            assert!(p.rotation.orthonormality_error() < 1e-12);
        }
    }

    #[test]
    fn trajectory_is_seeded() {
        let spec = SceneSpec::builtin("round_table").unwrap();
        assert_eq!(sample_trajectory(&spec, 10, 4), sample_trajectory(&spec, 10, 4));
        assert_ne!(sample_trajectory(&spec, 10, 4), sample_trajectory(&spec, 10, 5));
    }

    #[test]
    fn oracle_modes_examples() {
        let spec = SceneSpec::builtin("unambiguous").unwrap();
        let pose = ring_pose(0.4, 1.0, 0.6);
        assert_eq!(oracle_modes(&spec, &pose).unwrap().modes, vec![pose]);

        let spec = SceneSpec::builtin("round_table").unwrap();
        let pose = ring_pose(0.0, 1.0, 0.6);
        let modes = oracle_modes(&spec, &pose).unwrap();
        assert_eq!(modes.len(), 4);
        for (j, m) in modes.modes.iter().enumerate() {
            let expect = ring_pose(j as f64 * PI / 2.0, 1.0, 0.6);
            assert!(pose_distance(m, &expect, &PoseDistanceWeights::default()) < 1e-12);
        }

        let spec = SceneSpec::builtin("dinner_table").unwrap();
        let pose = ring_pose(0.7, 1.0, 0.6);
        let g = spec.generator();
        let twice = pose.rotated_by(&g).rotated_by(&g);
        assert!(pose_distance(&twice, &pose, &PoseDistanceWeights::default()) < 1e-12);
    }

    #[test]
    fn oracle_modes_are_separated_orbits() {
        for name in ["round_table", "dinner_table", "ceiling_grid"] {
            let spec = SceneSpec::builtin(name).unwrap();
            for pose in sample_trajectory(&spec, 16, 2) {
                let modes = oracle_modes(&spec, &pose).unwrap();
                assert_eq!(modes.len(), spec.symmetry_order as usize);
                assert_eq!(*modes.truth(), pose);
                let w = PoseDistanceWeights::default();
                for (i, a) in modes.modes.iter().enumerate() {
                    for b in &modes.modes[i + 1..] {
                        assert!(pose_distance(a, b, &w) > MODE_SEPARATION_FLOOR);
                    }
                    // Closure: applying the generator lands on another mode.
                    let image = a.rotated_by(&spec.generator());
                    assert!(modes.modes.iter().any(|m| pose_distance(m, &image, &w) < 1e-9));
                }
            }
        }
    }

    #[test]
    fn dataset_is_reproducible_and_in_bounds() {
        let spec = SceneSpec::builtin("round_table").unwrap();
        let a = generate_dataset(&spec, 12, 6, 7).unwrap();
        let b = generate_dataset(&spec, 12, 6, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.test.len()), (12, 6));
        assert!(a
            .train
            .iter()
            .chain(&a.test)
            .all(|s| spec.bounds.contains(&s.pose.translation)));
        assert_ne!(a.train[0].pose, a.test[0].pose);
        assert!(generate_dataset(&spec, 0, 6, 7).is_err());
    }

    #[test]
    fn ambiguous_test_poses_have_symmetric_training_neighbours() {
        let spec = SceneSpec::builtin("round_table").unwrap();
        let ds = generate_dataset(&spec, 400, 100, 11).unwrap();
        let mut hits = 0;
        for q in &ds.test {
            let nearest = ds
                .train
                .iter()
                .min_by(|a, b| {
                    let da: f64 = a.obs.iter().zip(&q.obs).map(|(x, y)| (x - y) * (x - y)).sum();
                    let db: f64 = b.obs.iter().zip(&q.obs).map(|(x, y)| (x - y) * (x - y)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            let modes = oracle_modes(&spec, &q.pose).unwrap();
            let near_mode = modes.modes.iter().any(|m| {
                let dt = norm3(&core::array::from_fn(|i| {
                    m.translation[i] - nearest.pose.translation[i]
                }));
                dt <= 0.1 * spec.scale() && geodesic_angle(&m.rotation, &nearest.pose.rotation) <= 10f64.to_radians()
            });
            hits += near_mode as usize;
        }
        assert!(hits >= 95, "{hits} of 100");
    }
}
