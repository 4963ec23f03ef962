//! Average flatness: expected training loss under Gaussian weight noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Objective;
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::l2_norm;

pub const DEFAULT_FLATNESS_SCALE: f64 = 0.01;
pub const DEFAULT_FLATNESS_SAMPLES: usize = 1000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Per-tensor std `scale · ‖W‖₂ / √len(W)`.
    #[default]
    Relative,
    /// Std `scale` for every coordinate.
    Absolute,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlatnessOptions {
    pub samples: usize,
    pub scale: f64,
    pub seed: u64,
    pub mode: NoiseMode,
}

impl Default for FlatnessOptions {
    fn default() -> Self {
        Self { samples: DEFAULT_FLATNESS_SAMPLES, scale: DEFAULT_FLATNESS_SCALE, seed: 0, mode: NoiseMode::Relative }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlatnessEstimate {
    pub mean: f64,
    /// Monte-Carlo standard error of `mean`.
    pub std_error: f64,
    pub scale: f64,
    pub samples: usize,
}

/// Per-coordinate noise std implied by `mode`.
pub fn noise_stds(params: &ParameterSet, w: &[f64], scale: f64, mode: NoiseMode) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    for info in params.infos() {
        let r = info.range();
        let std = match mode {
            NoiseMode::Relative => scale * l2_norm(&w[r.clone()]) / (r.len() as f64).sqrt(),
            NoiseMode::Absolute => scale,
        };
        out[r].iter_mut().for_each(|s| *s = std);
    }
    out
}

/// Monte-Carlo estimate of `E[L(w + ε)]`. Sample `i` draws its noise from a
/// stream seeded `seed + i`; samples run in parallel and are reduced in
/// index order.
pub fn avg_flatness<O: Objective + Sync + ?Sized>(
    obj: &O,
    params: &ParameterSet,
    w: &[f64],
    opts: &FlatnessOptions,
) -> Result<FlatnessEstimate> {
    if !(opts.scale >= 0.0) {
        return Err(Error::InvalidConfig(format!("flatness scale must be >= 0, got {}", opts.scale)));
    }
    if opts.samples == 0 {
        return Err(Error::InvalidConfig("flatness needs at least one sample".into()));
    }
    if params.len() != w.len() {
        return Err(Error::Shape { op: "avg_flatness", shapes: vec![vec![params.len()], vec![w.len()]] });
    }
    let stds = noise_stds(params, w, opts.scale, opts.mode);
    let losses: Vec<f64> = (0..opts.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(i as u64));
            let unit = Normal::new(0.0, 1.0).expect("unit normal");
            let p: Vec<f64> = w.iter().zip(&stds).map(|(wi, s)| wi + s * unit.sample(&mut rng)).collect();
            obj.loss(&p)
        })
        .collect::<Result<_>>()?;
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = if losses.len() > 1 { losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(FlatnessEstimate { mean, std_error: (var / n).sqrt(), scale: opts.scale, samples: opts.samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::FnObjective;
    use crate::params::Role;
    use crate::tensor::Tensor;

    fn layout(n: usize) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.push("w", Role::Other, None, Tensor::zeros(&[n])).unwrap();
        p
    }

    #[test]
    fn zero_scale_is_exact() {
        let obj = FnObjective::new(2, |w: &[f64]| (w[0] - 0.3).powi(2) + w[1].sin(), |_: &[f64]| vec![0.0; 2]);
        let w = [1.0, 0.5];
        let est = avg_flatness(&obj, &layout(2), &w, &FlatnessOptions { scale: 0.0, samples: 5, ..Default::default() })
            .unwrap();
        assert_eq!(est.mean, obj.loss(&w).unwrap());
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn quadratic_expectation() {
        let obj = FnObjective::new(1, |w: &[f64]| w[0] * w[0], |w: &[f64]| vec![2.0 * w[0]]);
        let sigma = 0.3;
        let opts = FlatnessOptions { samples: 4000, scale: sigma, seed: 3, mode: NoiseMode::Absolute };
        let est = avg_flatness(&obj, &layout(1), &[0.0], &opts).unwrap();
        assert!((est.mean - sigma * sigma).abs() < 3.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn relative_noise_follows_tensor_norm() {
        let mut p = ParameterSet::new();
        p.push("a", Role::Other, None, Tensor::from_vec(vec![3.0, 4.0])).unwrap();
        p.push("b", Role::Other, None, Tensor::from_vec(vec![0.0])).unwrap();
        let s = noise_stds(&p, p.flat(), 0.1, NoiseMode::Relative);
        let want = 0.1 * 5.0 / 2f64.sqrt();
        assert!((s[0] - want).abs() < 1e-15 && (s[1] - want).abs() < 1e-15);
        assert_eq!(s[2], 0.0);
    }
}
