//! FGSM with random start, PGD, and the fused adversarial SAM step.
//!
//! Perturbations live in raw pixel units on the `[0, 1]` domain, inside an
//! `ℓ∞` ball of radius `epsilon` around the clean image.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, GradRequest, LossKind, Mode, Model};
use crate::optim::{base_step, sam_perturbation, OptimizerState, StepOutcome, TrainConfig};
use crate::tensor::{l2_norm, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// `ℓ∞` radius of the pixel perturbation.
    pub epsilon: f64,
    /// FGSM step; `None` means `1.25 · epsilon`.
    pub fgsm_step: Option<f64>,
    pub pgd_steps: usize,
    pub pgd_step_size: f64,
    /// Start PGD from a uniform point in the ball instead of the clean image.
    pub pgd_random_start: bool,
    /// Train with FGSM-perturbed inputs (fused with SAM when `sam_rho > 0`).
    pub adversarial_training: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 2.0 / 255.0,
            fgsm_step: None,
            pgd_steps: 10,
            pgd_step_size: 0.25 / 255.0,
            pgd_random_start: false,
            adversarial_training: false,
        }
    }
}

impl AttackConfig {
    pub fn alpha(&self) -> f64 {
        self.fgsm_step.unwrap_or(1.25 * self.epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            errs.push(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if !(self.pgd_step_size > 0.0) {
            errs.push(format!("pgd_step_size must be > 0, got {}", self.pgd_step_size));
        }
        if let Some(a) = self.fgsm_step {
            if !(a > 0.0) {
                errs.push(format!("fgsm_step must be > 0, got {a}"));
            }
        }
        if self.pgd_steps == 0 {
            errs.push("pgd_steps must be >= 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs.join("; ")))
        }
    }
}

/// Clamp `v` into `[x - eps, x + eps] ∩ [0, 1]` such that the computed
/// differences `|v - x|` never exceed `eps` after rounding.
pub fn project_pixel(v: f64, x: f64, eps: f64) -> f64 {
    let lo = (x - eps).max(0.0);
    let hi = (x + eps).min(1.0);
    let mut p = v.clamp(lo.min(hi), hi.max(lo));
    while p - x > eps {
        p = p.next_down();
    }
    while x - p > eps {
        p = p.next_up();
    }
    p.clamp(0.0, 1.0)
}

pub fn project(adv: &Tensor, clean: &Tensor, eps: f64) -> Tensor {
    let data = adv.data().iter().zip(clean.data()).map(|(&v, &x)| project_pixel(v, x, eps)).collect();
    Tensor::new(clean.shape().to_vec(), data).expect("same shape")
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `∇_x L` at `x` for the current weights.
pub fn input_grad(model: &Model, x: &Tensor, targets: &Tensor, loss: LossKind) -> Result<(f64, Tensor)> {
    let r = model.loss_grads(model.weights(), x, targets, loss, Mode::Eval, GradRequest { params: false, input: true })?;
    Ok((r.loss, r.input.expect("requested")))
}

/// One signed-gradient step from `start`, projected back onto the ball
/// around `clean`.
pub fn fgsm_step(model: &Model, clean: &Tensor, start: &Tensor, targets: &Tensor, loss: LossKind, step: f64, eps: f64) -> Result<Tensor> {
    let (_, g) = input_grad(model, start, targets, loss)?;
    let moved: Vec<f64> = start.data().iter().zip(g.data()).map(|(s, gi)| s + step * sign(*gi)).collect();
    Ok(project(&Tensor::new(clean.shape().to_vec(), moved)?, clean, eps))
}

/// `x + δ₀` with `δ₀ ~ U[-eps, eps]` per pixel, projected to the domain.
pub fn random_start(clean: &Tensor, eps: f64, rng: &mut ChaCha8Rng) -> Tensor {
    if eps == 0.0 {
        return clean.clone();
    }
    let data: Vec<f64> = clean.data().iter().map(|&x| x + rng.gen_range(-eps..=eps)).collect();
    project(&Tensor::new(clean.shape().to_vec(), data).expect("same shape"), clean, eps)
}

pub fn fgsm_random_start(
    model: &Model,
    x: &Tensor,
    targets: &Tensor,
    loss: LossKind,
    cfg: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    if cfg.epsilon == 0.0 {
        return Ok(x.clone());
    }
    let start = random_start(x, cfg.epsilon, rng);
    fgsm_step(model, x, &start, targets, loss, cfg.alpha(), cfg.epsilon)
}

/// `pgd_steps` projected signed-gradient steps of `pgd_step_size`. Starts
/// from the clean image unless `pgd_random_start` is set (which draws from
/// `rng`).
pub fn pgd_attack(
    model: &Model,
    x: &Tensor,
    targets: &Tensor,
    loss: LossKind,
    cfg: &AttackConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor> {
    if cfg.epsilon == 0.0 {
        return Ok(x.clone());
    }
    let mut adv = match (cfg.pgd_random_start, rng) {
        (true, Some(r)) => random_start(x, cfg.epsilon, r),
        _ => x.clone(),
    };
    for _ in 0..cfg.pgd_steps {
        adv = fgsm_step(model, x, &adv, targets, loss, cfg.pgd_step_size, cfg.epsilon)?;
    }
    Ok(adv)
}

/// Per-example correctness of `model` on `x`.
pub fn correct(model: &Model, x: &Tensor, labels: &[usize]) -> Result<Vec<bool>> {
    Ok(model.predict(x)?.iter().zip(labels).map(|(p, y)| p == y).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackReport {
    pub clean_acc: f64,
    pub fgsm_acc: f64,
    pub pgd_acc: f64,
    pub epsilon: f64,
    pub steps: usize,
}

/// Clean, FGSM and PGD accuracy over a dataset, attacked in chunks; chunk
/// `c` draws its FGSM random start from a stream seeded `seed + c`.
pub fn evaluate_attacks(
    model: &Model,
    images: &Tensor,
    labels: &[usize],
    loss: LossKind,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackReport> {
    use rand::SeedableRng;
    let n = labels.len();
    if n == 0 {
        return Err(Error::InvalidConfig("attack evaluation needs at least one example".into()));
    }
    let k = model.spec().num_classes;
    let (mut clean, mut fgsm, mut pgd) = (0usize, 0usize, 0usize);
    for (c, start) in (0..n).step_by(crate::geometry::activity::EVAL_CHUNK).enumerate() {
        let end = (start + crate::geometry::activity::EVAL_CHUNK).min(n);
        let x = images.index_range(start, end);
        let y = &labels[start..end];
        let t = crate::model::one_hot(y, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(c as u64));
        clean += correct(model, &x, y)?.iter().filter(|b| **b).count();
        let xf = fgsm_random_start(model, &x, &t, loss, cfg, &mut rng)?;
        fgsm += correct(model, &xf, y)?.iter().filter(|b| **b).count();
        let xp = pgd_attack(model, &x, &t, loss, cfg, Some(&mut rng))?;
        pgd += correct(model, &xp, y)?.iter().filter(|b| **b).count();
    }
    let n = n as f64;
    Ok(AttackReport {
        clean_acc: clean as f64 / n,
        fgsm_acc: fgsm as f64 / n,
        pgd_acc: pgd as f64 / n,
        epsilon: cfg.epsilon,
        steps: cfg.pgd_steps,
    })
}

/// Loss, weight gradient and input gradient from one backward pass.
pub fn fused_gradients(
    model: &Model,
    w: &[f64],
    x: &Tensor,
    targets: &Tensor,
    loss: LossKind,
    mode: Mode,
) -> Result<(f64, Vec<f64>, Tensor)> {
    let r = model.loss_grads(w, x, targets, loss, mode, GradRequest { params: true, input: true })?;
    Ok((r.loss, r.params.expect("requested"), r.input.expect("requested")))
}

fn checked(l: f64, what: &str) -> Result<f64> {
    if l.is_finite() {
        Ok(l)
    } else {
        Err(Error::NonFinite(format!("{what} is {l}")))
    }
}

/// Three-level min-max step: one backward at `(w, x + δ₀)` yields both
/// `∇_w` (for `ε̂`) and `∇_x` (for the FGSM `δ`); the update gradient is
/// taken at `(w + ε̂, x + δ)`. With `epsilon = 0` this is `sam_step`, with
/// `sam_rho = 0` plain FGSM training, with both zero a base step.
#[allow(clippy::too_many_arguments)]
pub fn adv_sam_step(
    model: &mut Model,
    x: &Tensor,
    targets: &Tensor,
    train: &TrainConfig,
    attack: &AttackConfig,
    state: &mut OptimizerState,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome> {
    let w = model.weights().to_vec();
    let eps = attack.epsilon;
    let rho = train.sam_rho;
    let start = random_start(x, eps, rng);
    let r = model.loss_grads(&w, &start, targets, train.loss, mode, GradRequest { params: true, input: eps > 0.0 })?;
    let loss = checked(r.loss, "loss")?;
    let gw = r.params.expect("requested");
    let x_adv = match r.input {
        Some(gx) => {
            let moved: Vec<f64> =
                start.data().iter().zip(gx.data()).map(|(s, g)| s + attack.alpha() * sign(*g)).collect();
            project(&Tensor::new(x.shape().to_vec(), moved)?, x, eps)
        }
        None => x.clone(),
    };
    let eps_w = if rho > 0.0 {
        match sam_perturbation(&gw, rho) {
            Ok(e) => Some(e),
            Err(Error::DegenerateGradient(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let fell_back = rho > 0.0 && eps_w.is_none();
    let (perturbed_loss, g) = match (&eps_w, eps > 0.0) {
        (None, false) => (None, gw),
        _ => {
            let wp: Vec<f64> = match &eps_w {
                Some(e) => w.iter().zip(e).map(|(a, b)| a + b).collect(),
                None => w.clone(),
            };
            let r2 = model.loss_grads(&wp, &x_adv, targets, train.loss, mode, GradRequest { params: true, input: false })?;
            (Some(checked(r2.loss, "loss at perturbed point")?), r2.params.expect("requested"))
        }
    };
    let grad_norm = l2_norm(&g);
    let mut w = w;
    base_step(&mut w, g, train, state)?;
    model.set_weights(&w)?;
    Ok(StepOutcome { loss, perturbed_loss, grad_norm, fell_back })
}

/// Fraction of rows of `logits` whose argmax equals the label.
pub fn accuracy_from_logits(logits: &Tensor, labels: &[usize]) -> f64 {
    let k = logits.shape()[1];
    let hits = logits.data().chunks(k).zip(labels).filter(|(row, y)| argmax(row) == **y).count();
    hits as f64 / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn projection_is_exactly_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10_000 {
            let x: f64 = rng.gen_range(0.0..=1.0);
            let v: f64 = rng.gen_range(-0.5..1.5);
            let eps = 2.0 / 255.0;
            let p = project_pixel(v, x, eps);
            assert!((p - x).abs() <= eps && (0.0..=1.0).contains(&p));
        }
        assert_eq!(project_pixel(0.5, 0.4, 0.0), 0.4);
    }

    #[test]
    fn defaults() {
        let c = AttackConfig::default();
        assert_eq!(c.pgd_steps, 10);
        assert!((c.alpha() - 2.5 / 255.0).abs() < 1e-18);
        c.validate().unwrap();
        assert!(AttackConfig { pgd_steps: 0, ..c }.validate().is_err());
    }
}
