use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::optim::config::{BaseOptimizer, Decay, TrainConfig};
use crate::tensor::l2_norm;

/// Step counter plus first/second moment buffers over the flat weight vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    /// SGD velocity or Adam first moment.
    pub m: Vec<f64>,
    /// Adam second moment (unused by SGD).
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(dim: usize) -> Self {
        Self { step: 0, m: vec![0.0; dim], v: vec![0.0; dim] }
    }
}

/// Linear warmup from 0 to the peak, then cosine or linear decay to 0 at
/// `total_steps`.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let peak = cfg.learning_rate;
    let warm = cfg.warmup_steps;
    if warm > 0 && step <= warm {
        return peak * step as f64 / warm as f64;
    }
    if step >= cfg.total_steps {
        return 0.0;
    }
    let p = (step - warm) as f64 / (cfg.total_steps - warm) as f64;
    match cfg.decay {
        Decay::Cosine => peak * 0.5 * (1.0 + (PI * p).cos()),
        Decay::Linear => peak * (1.0 - p),
    }
}

pub fn global_norm(g: &[f64]) -> f64 {
    l2_norm(g)
}

/// Rescale `g` in place to norm `max_norm` if it is larger; returns the
/// pre-clip norm.
pub fn clip_global_norm(g: &mut [f64], max_norm: f64) -> f64 {
    let n = l2_norm(g);
    if n > max_norm {
        let s = max_norm / n;
        g.iter_mut().for_each(|x| *x *= s);
    }
    n
}

/// One base-optimizer update: clip, then the SGD-momentum or AdamW rule with
/// decoupled weight decay. `grad` is taken by value since clipping mutates it.
pub fn base_step(w: &mut [f64], mut grad: Vec<f64>, cfg: &TrainConfig, state: &mut OptimizerState) -> Result<()> {
    if grad.len() != w.len() || state.m.len() != w.len() || state.v.len() != w.len() {
        return Err(Error::Shape { op: "base_step", shapes: vec![vec![w.len()], vec![grad.len()], vec![state.m.len()]] });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient coordinate {i}")));
    }
    if let Some(c) = cfg.clip_norm {
        clip_global_norm(&mut grad, c);
    }
    let lr = lr_at(state.step, cfg);
    let wd = cfg.weight_decay;
    match cfg.optimizer {
        BaseOptimizer::Sgd => {
            let mu = cfg.momentum;
            for ((wi, mi), gi) in w.iter_mut().zip(state.m.iter_mut()).zip(&grad) {
                *mi = mu * *mi + gi;
                *wi -= lr * (*mi + wd * *wi);
            }
        }
        BaseOptimizer::Adamw => {
            let (b1, b2) = (cfg.beta1, cfg.beta2);
            let t = (state.step + 1) as i32;
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            for i in 0..w.len() {
                let g = grad[i];
                state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
                state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
                let mhat = state.m[i] / c1;
                let vhat = state.v[i] / c2;
                w[i] -= lr * (mhat / (vhat.sqrt() + cfg.adam_eps) + wd * w[i]);
            }
        }
    }
    state.step += 1;
    Ok(())
}
