//! Dominant Hessian eigenvalue by power iteration on finite-difference HVPs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{hessian_vector_product, Objective};
use crate::error::{Error, Result};
use crate::params::{ParameterSet, Role};
use crate::tensor::{dot, l2_norm};

pub const DEFAULT_POWER_ITERS: usize = 100;

#[derive(Clone, Debug)]
pub struct PowerResult {
    /// Rayleigh quotient `vᵀHv` of the returned unit vector; the
    /// largest-magnitude eigenvalue, sign included.
    pub eigenvalue: f64,
    pub vector: Vec<f64>,
}

fn apply_mask(v: &mut [f64], mask: Option<&[bool]>) {
    if let Some(m) = mask {
        v.iter_mut().zip(m).filter(|(_, keep)| !**keep).for_each(|(x, _)| *x = 0.0);
    }
}

fn normalize(v: &mut [f64]) -> Result<()> {
    let n = l2_norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Collapsed);
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

/// Power iteration restricted to the coordinates where `mask` is true
/// (`None` = all). Unmasked coordinates are zeroed after every product, so
/// this iterates on the corresponding principal sub-block of the Hessian.
pub fn lambda_max_power<O: Objective + ?Sized>(
    obj: &O,
    w: &[f64],
    mask: Option<&[bool]>,
    iters: usize,
    seed: u64,
    fd_step: f64,
) -> Result<PowerResult> {
    if let Some(m) = mask {
        if m.len() != w.len() {
            return Err(Error::Shape { op: "lambda_max_power", shapes: vec![vec![w.len()], vec![m.len()]] });
        }
        if !m.iter().any(|&b| b) {
            return Err(Error::InvalidConfig("parameter mask selects nothing".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..w.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    apply_mask(&mut v, mask);
    normalize(&mut v)?;
    for _ in 0..iters {
        let mut hv = hessian_vector_product(obj, w, &v, fd_step)?;
        apply_mask(&mut hv, mask);
        normalize(&mut hv)?;
        v = hv;
    }
    let mut hv = hessian_vector_product(obj, w, &v, fd_step)?;
    apply_mask(&mut hv, mask);
    Ok(PowerResult { eigenvalue: dot(&v, &hv), vector: v })
}

/// Mask selecting every parameter tensor tagged with `role`.
pub fn role_mask(params: &ParameterSet, role: Role) -> Vec<bool> {
    params.mask(|p| p.role == role)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{FnObjective, DEFAULT_FD_STEP};

    fn quad() -> impl Objective {
        FnObjective::new(
            2,
            |w: &[f64]| 0.5 * (5.0 * w[0] * w[0] + w[1] * w[1]),
            |w: &[f64]| vec![5.0 * w[0], w[1]],
        )
    }

    #[test]
    fn quadratic_top_eigenvalue() {
        let r = lambda_max_power(&quad(), &[0.3, -0.2], None, 100, 0, DEFAULT_FD_STEP).unwrap();
        assert!((r.eigenvalue - 5.0).abs() < 1e-6, "{}", r.eigenvalue);
    }

    #[test]
    fn masked_sub_block() {
        let r = lambda_max_power(&quad(), &[0.3, -0.2], Some(&[false, true]), 100, 0, DEFAULT_FD_STEP).unwrap();
        assert!((r.eigenvalue - 1.0).abs() < 1e-6);
        assert_eq!(r.vector[0], 0.0);
    }

    #[test]
    fn negative_dominant_sign_is_kept() {
        let obj = FnObjective::new(2, |w: &[f64]| -3.0 * w[0] * w[0] + 0.5 * w[1] * w[1], |w: &[f64]| vec![-6.0 * w[0], w[1]]);
        let r = lambda_max_power(&obj, &[0.0, 0.0], None, 100, 1, DEFAULT_FD_STEP).unwrap();
        assert!((r.eigenvalue + 6.0).abs() < 1e-6);
    }

    #[test]
    fn zero_hessian_collapses() {
        let obj = FnObjective::new(2, |w: &[f64]| w[0] + w[1], |_: &[f64]| vec![1.0, 1.0]);
        assert!(matches!(lambda_max_power(&obj, &[0.0, 0.0], None, 10, 0, DEFAULT_FD_STEP), Err(Error::Collapsed)));
    }
}
