//! Central-difference check of the full per-image objective: encoder,
//! reparameterization, pose map, decode, pose distance and KL.

use ambipose_core::diffnet::Network;
use ambipose_core::model::{Architecture, PoseRegressor};
use ambipose_core::scenes::{generate_dataset, SceneSpec};
use ambipose_core::trainer::{per_image_loss, TrainConfig, TrainMode};
use ambipose_core::LabeledSample;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn small_model(spec: &SceneSpec, mode: TrainMode, seed: u64) -> PoseRegressor {
    let arch = Architecture {
        obs_dim: spec.obs_dim(),
        latent_dim: 3,
        encoder_hidden: vec![8],
        posemap_width: 8,
        n_layers: 1,
    };
    PoseRegressor::new(&arch, spec.bounds, mode.regressor_mode(), seed).unwrap()
}

fn param_mut(net: &mut Network, mut j: usize) -> &mut f64 {
    for layer in net.layers_mut() {
        let nw = layer.weights.data.len();
        if j < nw {
            return &mut layer.weights.data[j];
        }
        j -= nw;
        if j < layer.bias.len() {
            return &mut layer.bias[j];
        }
        j -= layer.bias.len();
    }
    panic!("parameter index out of range")
}

fn bump(model: &mut PoseRegressor, net: usize, j: usize, delta: f64) {
    let net = if net == 0 {
        &mut model.encoder
    } else {
        &mut model.posemap
    };
    *param_mut(net, j) += delta;
}

/// Fraction of parameters whose analytic and numeric derivatives agree.
fn agreement(model: &PoseRegressor, sample: &LabeledSample, cfg: &TrainConfig) -> f64 {
    let noise_seed = 17;
    let (_, grad) = per_image_loss(model, sample, cfg, noise_seed).unwrap();
    let loss_at = |m: &PoseRegressor| per_image_loss(m, sample, cfg, noise_seed).unwrap().0.total;
    let mut checked = 0;
    let mut good = 0;
    for (which, analytic) in [(0, grad.encoder.flatten()), (1, grad.posemap.flatten())] {
        for (j, a) in analytic.iter().enumerate() {
            let mut plus = model.clone();
            let mut minus = model.clone();
            bump(&mut plus, which, j, H);
            bump(&mut minus, which, j, -H);
            let n = (loss_at(&plus) - loss_at(&minus)) / (2.0 * H);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            checked += 1;
            good += usize::from(rel <= REL_TOL);
        }
    }
    good as f64 / checked as f64
}

fn check(mode: TrainMode, beta: f64) {
    let spec = SceneSpec::builtin("round_table").unwrap();
    let ds = generate_dataset(&spec, 3, 1, 5).unwrap();
    for (i, sample) in ds.train.iter().enumerate() {
        let model = small_model(&spec, mode, 100 + i as u64);
        let cfg = TrainConfig {
            mode,
            mc_samples: 40,
            beta: Some(beta),
            ..TrainConfig::default()
        };
        let frac = agreement(&model, sample, &cfg);
        assert!(
            frac >= 0.99,
            "{mode:?} image {i}: only {:.2}% of parameters agree",
            100.0 * frac
        );
    }
}

#[test]
fn wta_objective_gradient_matches_central_differences() {
    check(TrainMode::Wta, 0.5);
}

#[test]
fn elbo_objective_gradient_matches_central_differences() {
    check(TrainMode::Elbo, 1.0);
}

#[test]
fn ablation_objective_gradient_matches_central_differences() {
    check(TrainMode::Ablation, 0.0);
}
