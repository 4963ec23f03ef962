//! Scalar objectives over a flat weight vector, and the finite-difference
//! routines built on them.

use crate::error::{Error, Result};
use crate::tensor::l2_norm;

/// Default relative finite-difference step; the absolute step is this times
/// `1 + max|w_i|`.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// A deterministic scalar loss of a flat weight vector.
pub trait Objective {
    fn dim(&self) -> usize;

    fn loss(&self, w: &[f64]) -> Result<f64>;

    fn loss_and_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn grad(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.loss_and_grad(w).map(|(_, g)| g)
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn loss(&self, w: &[f64]) -> Result<f64> {
        (**self).loss(w)
    }
    fn loss_and_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        (**self).loss_and_grad(w)
    }
}

/// Objective from a pair of closures; handy for analytic toy losses.
pub struct FnObjective<L, G> {
    dim: usize,
    loss: L,
    grad: G,
}

impl<L, G> FnObjective<L, G>
where
    L: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    pub fn new(dim: usize, loss: L, grad: G) -> Self {
        Self { dim, loss, grad }
    }
}

impl<L, G> Objective for FnObjective<L, G>
where
    L: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn loss(&self, w: &[f64]) -> Result<f64> {
        Ok((self.loss)(w))
    }
    fn loss_and_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok(((self.loss)(w), (self.grad)(w)))
    }
}

pub fn scaled_step(step: f64, w: &[f64]) -> f64 {
    let inf = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    step * (1.0 + inf)
}

/// Central-difference gradient, `(L(w + h e_i) - L(w - h e_i)) / 2h` with
/// `h = step * (1 + |w|_inf)`.
pub fn finite_diff_grad<F: Fn(&[f64]) -> Result<f64>>(loss: F, w: &[f64], step: f64) -> Result<Vec<f64>> {
    let h = scaled_step(step, w);
    let mut probe = w.to_vec();
    let mut out = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        probe[i] = w[i] + h;
        let up = loss(&probe)?;
        probe[i] = w[i] - h;
        let down = loss(&probe)?;
        probe[i] = w[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteProbe { coordinate: i });
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Hessian-vector product by central differences of gradients along the unit
/// direction `u = v/|v|`:
/// `|v| (g(w + h u) - g(w - h u)) / 2h`, `h = step * (1 + |w|_inf)`.
pub fn hessian_vector_product<O: Objective + ?Sized>(obj: &O, w: &[f64], v: &[f64], step: f64) -> Result<Vec<f64>> {
    let norm = l2_norm(v);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    let h = scaled_step(step, w);
    let plus: Vec<f64> = w.iter().zip(v).map(|(wi, vi)| wi + h * (vi / norm)).collect();
    let minus: Vec<f64> = w.iter().zip(v).map(|(wi, vi)| wi - h * (vi / norm)).collect();
    let gp = obj.grad(&plus)?;
    let gm = obj.grad(&minus)?;
    Ok(gp.iter().zip(&gm).map(|(a, b)| norm * (a - b) / (2.0 * h)).collect())
}
