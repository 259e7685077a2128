//! Variational camera-pose posteriors for visually ambiguous scenes.
//!
//! An encoder maps an observation to a diagonal Gaussian over a latent
//! space; a pose map sends latent samples to SE(3). Training minimizes a
//! winners-take-all Monte-Carlo objective that only supervises the fraction
//! of samples closest to the ground truth, which lets separate modes form
//! where one observation is consistent with several poses.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. File formats, timing and the command-line driver live in the
//! companion `ambipose` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

mod colormap;
pub mod diffnet;
pub mod eval;
pub mod geometry;
pub mod math;
pub mod model;
pub mod scenes;
pub mod seed;
pub mod trainer;
pub mod viz;

pub use geometry::{Pose, PoseDistanceWeights, Rotation, Rotation6D};
pub use model::{GaussianLatent, PoseRegressor, PoseSampleSet, SceneBounds};
pub use scenes::{Dataset, LabeledSample, SceneSpec};
pub use trainer::{TrainConfig, TrainMode};
