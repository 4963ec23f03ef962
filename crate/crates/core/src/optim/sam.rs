use rayon::prelude::*;

use crate::autodiff::Objective;
use crate::error::{Error, Result};
use crate::optim::base::{base_step, OptimizerState};
use crate::optim::config::TrainConfig;
use crate::tensor::l2_norm;

/// Gradients with a smaller norm than this cannot define a SAM direction.
pub const DEGENERATE_GRAD_NORM: f64 = 1e-12;

/// What happened during one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Loss at the unperturbed weights.
    pub loss: f64,
    /// Loss at `w + ε̂` (None for plain or fallback steps).
    pub perturbed_loss: Option<f64>,
    /// Norm of the gradient fed to the base optimizer, before clipping.
    pub grad_norm: f64,
    /// True when the SAM direction was degenerate and a base step was taken.
    pub fell_back: bool,
}

/// `ε̂ = ρ g / ‖g‖₂`.
pub fn sam_perturbation(grad: &[f64], rho: f64) -> Result<Vec<f64>> {
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient coordinate {i}")));
    }
    let n = l2_norm(grad);
    if n < DEGENERATE_GRAD_NORM {
        return Err(Error::DegenerateGradient(n));
    }
    let s = rho / n;
    Ok(grad.iter().map(|g| g * s).collect())
}

fn checked(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite(format!("{what} is {loss}")))
    }
}

fn add(w: &[f64], e: &[f64]) -> Vec<f64> {
    w.iter().zip(e).map(|(a, b)| a + b).collect()
}

/// Gradient at `w`, then (for ρ > 0) the gradient at `w + ε̂`.
/// Returns (loss, perturbed loss, update gradient, fell back).
fn sam_gradient<O: Objective + ?Sized>(obj: &O, w: &[f64], rho: f64) -> Result<(f64, Option<f64>, Vec<f64>, bool)> {
    let (loss, g) = obj.loss_and_grad(w)?;
    let loss = checked(loss, "loss")?;
    if rho == 0.0 {
        return Ok((loss, None, g, false));
    }
    let eps = match sam_perturbation(&g, rho) {
        Ok(e) => e,
        Err(Error::DegenerateGradient(_)) => return Ok((loss, None, g, true)),
        Err(e) => return Err(e),
    };
    let (l2, g2) = obj.loss_and_grad(&add(w, &eps))?;
    let l2 = checked(l2, "loss at perturbed weights")?;
    Ok((loss, Some(l2), g2, false))
}

/// One SAM update of `w` (a plain base step when `sam_rho` is 0). The
/// perturbation only exists in a temporary copy, so `w` changes only by the
/// base-optimizer update.
pub fn sam_step<O: Objective + ?Sized>(
    obj: &O,
    w: &mut [f64],
    cfg: &TrainConfig,
    state: &mut OptimizerState,
) -> Result<StepOutcome> {
    let (loss, perturbed_loss, g, fell_back) = sam_gradient(obj, w, cfg.sam_rho)?;
    let grad_norm = l2_norm(&g);
    base_step(w, g, cfg, state)?;
    Ok(StepOutcome { loss, perturbed_loss, grad_norm, fell_back })
}

/// Data-parallel SAM: each shard computes its own `ε̂` and sharpness-aware
/// gradient; the gradients are averaged in shard order.
pub fn sam_step_sharded<O: Objective + Sync>(
    shards: &[O],
    w: &mut [f64],
    cfg: &TrainConfig,
    state: &mut OptimizerState,
) -> Result<StepOutcome> {
    if shards.len() == 1 {
        return sam_step(&shards[0], w, cfg, state);
    }
    if shards.is_empty() {
        return Err(Error::InvalidConfig("no shards".into()));
    }
    let wv: &[f64] = w;
    let parts: Vec<Result<(f64, Option<f64>, Vec<f64>, bool)>> =
        shards.par_iter().map(|o| sam_gradient(o, wv, cfg.sam_rho)).collect();
    let k = shards.len() as f64;
    let mut g = vec![0.0; w.len()];
    let (mut loss, mut ploss, mut any_p, mut fell_back) = (0.0, 0.0, false, false);
    for part in parts {
        let (l, p, gi, fb) = part?;
        loss += l / k;
        if let Some(p) = p {
            ploss += p / k;
            any_p = true;
        }
        fell_back |= fb;
        g.iter_mut().zip(&gi).for_each(|(a, b)| *a += b / k);
    }
    let grad_norm = l2_norm(&g);
    base_step(w, g, cfg, state)?;
    Ok(StepOutcome { loss, perturbed_loss: any_p.then_some(ploss), grad_norm, fell_back })
}
