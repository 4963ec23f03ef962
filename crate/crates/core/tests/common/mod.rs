//! Oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sharpgeo::autodiff::FnObjective;
use sharpgeo::model::{build_model, Model, ModelSpec};
use sharpgeo::optim::{sam_step, BaseOptimizer, OptimizerState, TrainConfig};
use sharpgeo::Tensor;

/// `L(w) = 1 − 0.62·exp(−(w−2)²/0.02) − 0.60·exp(−(w+2)²/2)`: a sharp basin
/// at `w = 2` and a flat one at `w = −2`.
pub fn two_basin_loss(w: f64) -> f64 {
    1.0 - 0.62 * (-(w - 2.0).powi(2) / 0.02).exp() - 0.60 * (-(w + 2.0).powi(2) / 2.0).exp()
}

pub fn two_basin_grad(w: f64) -> f64 {
    0.62 * (-(w - 2.0).powi(2) / 0.02).exp() * (w - 2.0) / 0.01 + 0.60 * (-(w + 2.0).powi(2) / 2.0).exp() * (w + 2.0)
}

pub const TWO_BASIN_LR: f64 = 0.01;
pub const TWO_BASIN_STEPS: u64 = 2000;

pub fn two_basin_inits() -> Vec<f64> {
    (0..21).map(|i| 1.9 + 0.01 * i as f64).collect()
}

/// Hand-scripted SGD/SAM dynamics: cosine learning rate without warmup,
/// `ε = ρ·sign(L'(w))` in one dimension, plain gradient step.
pub fn scripted_two_basin(w0: f64, rho: f64) -> f64 {
    let mut w = w0;
    for t in 0..TWO_BASIN_STEPS {
        let lr = TWO_BASIN_LR * 0.5 * (1.0 + (PI * t as f64 / TWO_BASIN_STEPS as f64).cos());
        let g = two_basin_grad(w);
        let g = if rho > 0.0 && g.abs() >= 1e-12 { two_basin_grad(w + rho * g.signum()) } else { g };
        w -= lr * g;
    }
    w
}

pub fn two_basin_config(rho: f64) -> TrainConfig {
    TrainConfig {
        optimizer: BaseOptimizer::Sgd,
        learning_rate: TWO_BASIN_LR,
        momentum: 0.0,
        warmup_steps: 0,
        total_steps: TWO_BASIN_STEPS,
        sam_rho: rho,
        ..TrainConfig::default()
    }
}

/// The same dynamics driven through the library's `sam_step`.
pub fn library_two_basin(w0: f64, rho: f64) -> f64 {
    let obj = FnObjective::new(1, |w: &[f64]| two_basin_loss(w[0]), |w: &[f64]| vec![two_basin_grad(w[0])]);
    let cfg = two_basin_config(rho);
    let mut w = vec![w0];
    let mut state = OptimizerState::new(1);
    for _ in 0..TWO_BASIN_STEPS {
        sam_step(&obj, &mut w, &cfg, &mut state).unwrap();
    }
    w[0]
}

pub struct TwoBasinOutcome {
    pub inits: usize,
    /// Largest |library − scripted| final position over both optimizers.
    pub oracle_gap: f64,
    pub sgd_sharp: usize,
    pub sam_flat: usize,
    pub sam_finals: Vec<f64>,
}

pub fn run_two_basin() -> TwoBasinOutcome {
    let inits = two_basin_inits();
    let mut gap = 0.0f64;
    let (mut sgd_sharp, mut sam_flat) = (0, 0);
    let mut sam_finals = Vec::new();
    for &w0 in &inits {
        let sgd = library_two_basin(w0, 0.0);
        let sam = library_two_basin(w0, 0.3);
        gap = gap.max((sgd - scripted_two_basin(w0, 0.0)).abs()).max((sam - scripted_two_basin(w0, 0.3)).abs());
        if (sgd - 2.0).abs() < 0.5 {
            sgd_sharp += 1;
        }
        if (sam + 2.0).abs() < 1.0 {
            sam_flat += 1;
        }
        sam_finals.push(sam);
    }
    TwoBasinOutcome { inits: inits.len(), oracle_gap: gap, sgd_sharp, sam_flat, sam_finals }
}

/// Central-difference gradient with a fixed step, independent of the
/// library's numeric helpers.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, w: &[f64], h: f64) -> Vec<f64> {
    let mut p = w.to_vec();
    (0..w.len())
        .map(|i| {
            p[i] = w[i] + h;
            let up = f(&p);
            p[i] = w[i] - h;
            let down = f(&p);
            p[i] = w[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

/// A model with weights drawn from `U(−scale, scale)` instead of the small
/// initialization, so every term of the gradient is exercised.
pub fn random_model(spec: &ModelSpec, seed: u64, scale: f64) -> Model {
    let mut m = build_model(spec, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w: Vec<f64> = m.weights().iter().map(|_| rng.gen_range(-scale..scale)).collect();
    m.set_weights(&w).unwrap();
    m
}

pub fn random_images(n: usize, spec: &ModelSpec, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = vec![n, spec.image_height, spec.image_width, spec.channels];
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

/// Tiny architectures (each well under 5k parameters) for gradient checks.
pub fn tiny_specs() -> Vec<(&'static str, ModelSpec)> {
    let mut softmax_free = ModelSpec::vit(8, 3, 4, 8, 1, 2, 16, 3);
    softmax_free.softmax_free = true;
    vec![
        ("vit", ModelSpec::vit(8, 3, 4, 8, 2, 2, 16, 3)),
        ("vit-softmax-free", softmax_free),
        ("mixer", ModelSpec::mixer(8, 3, 4, 8, 2, 6, 16, 3)),
        ("cnn", ModelSpec::cnn(8, 3, 4, 2, 3)),
    ]
}
