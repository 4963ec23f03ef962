//! Condition number of the empirical NTK, approximated on diagonal blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::eigen::jacobi_eigen;
use crate::model::{Activation, Model};
use crate::tensor::{dot, Tensor};

pub const DEFAULT_NTK_BLOCK: usize = 48;
/// `λ_min ≤ this · λ_max` counts as singular and reports `κ = ∞`.
pub const SINGULAR_RATIO: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NtkAggregation {
    /// Average the block kernels elementwise, then take κ of the average.
    #[default]
    MatrixMean,
    /// Take κ per block and average the κ values.
    KappaMean,
}

#[derive(Clone, Debug)]
pub struct NtkResult {
    pub kappa: f64,
    /// Eigenvalues (descending) of the averaged block kernel.
    pub eigenvalues: Vec<f64>,
    /// The averaged `block x block` kernel, row-major.
    pub kernel: Vec<f64>,
    /// κ of each individual block.
    pub block_kappas: Vec<f64>,
}

/// `λ_max / λ_min`, or `+∞` when the spectrum is singular.
pub fn condition_number(eigenvalues: &[f64]) -> f64 {
    let hi = eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(hi > 0.0) || lo <= SINGULAR_RATIO * hi {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn gram(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = dot(&rows[i], &rows[j]);
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    g
}

/// Block NTK from per-example Jacobian rows: consecutive groups of `block`
/// rows form `Θ_b = J_b J_bᵀ`; leftover rows are dropped.
pub fn ntk_from_jacobian_rows(rows: &[Vec<f64>], block: usize, agg: NtkAggregation) -> Result<NtkResult> {
    if block == 0 || rows.len() < block {
        return Err(Error::InvalidConfig(format!("NTK needs at least {block} examples, got {}", rows.len())));
    }
    let nb = rows.len() / block;
    let mut mean = vec![0.0; block * block];
    let mut block_kappas = Vec::with_capacity(nb);
    for b in 0..nb {
        let g = gram(&rows[b * block..(b + 1) * block]);
        if agg == NtkAggregation::KappaMean || nb > 1 {
            block_kappas.push(condition_number(&jacobi_eigen(&g, block)?.values));
        }
        mean.iter_mut().zip(&g).for_each(|(m, v)| *m += v / nb as f64);
    }
    let eig = jacobi_eigen(&mean, block)?;
    if block_kappas.is_empty() {
        block_kappas.push(condition_number(&eig.values));
    }
    let kappa = match agg {
        NtkAggregation::MatrixMean => condition_number(&eig.values),
        NtkAggregation::KappaMean => block_kappas.iter().sum::<f64>() / nb as f64,
    };
    Ok(NtkResult { kappa, eigenvalues: eig.values, kernel: mean, block_kappas })
}

/// Per-example gradients of the summed logits, with GELU swapped for ReLU.
pub fn ntk_jacobian_rows(model: &Model, images: &Tensor) -> Result<Vec<Vec<f64>>> {
    let relu = model.with_activation(Activation::Relu);
    let n = images.shape().first().copied().unwrap_or(0);
    (0..n).map(|i| relu.summed_logit_grad(relu.weights(), &images.index_leading(i))).collect()
}

/// NTK condition number of a freshly initialized model.
pub fn ntk_condition(model: &Model, images: &Tensor, block: usize, agg: NtkAggregation) -> Result<NtkResult> {
    let n = images.shape().first().copied().unwrap_or(0);
    if block == 0 || n < block {
        return Err(Error::InvalidConfig(format!("NTK needs at least {block} examples, got {n}")));
    }
    let used = images.index_range(0, (n / block) * block);
    ntk_from_jacobian_rows(&ntk_jacobian_rows(model, &used)?, block, agg)
}
