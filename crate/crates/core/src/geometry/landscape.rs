//! Filter-normalized 2D loss landscapes.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::autodiff::Objective;
use crate::error::{Error, Result};
use crate::params::ParameterSet;

pub const DEFAULT_GRID: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LandscapeOptions {
    pub n: usize,
    pub range: (f64, f64),
    /// Direction `d₁` is drawn from `seed`, `d₂` from `seed + 1`.
    pub seed: u64,
}

impl Default for LandscapeOptions {
    fn default() -> Self {
        Self { n: DEFAULT_GRID, range: (-1.0, 1.0), seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct LandscapeGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    /// `loss[i * betas.len() + j]` is the loss at `w + alphas[i] d₁ + betas[j] d₂`.
    pub loss: Vec<f64>,
}

/// `n` evenly spaced points `lo + (hi - lo) i / n`, `i = 0..n`. The upper end
/// is excluded so that an even `n` over a symmetric range hits 0 exactly.
pub fn grid_axis(n: usize, range: (f64, f64)) -> Vec<f64> {
    (0..n).map(|i| range.0 + (range.1 - range.0) * (i as f64 / n as f64)).collect()
}

/// Rescale each filter of `direction` to the norm of the matching filter of
/// `w`. Filters are slices along the last axis (output units) of rank ≥ 2
/// tensors; rank-0/1 tensors count as a single filter. A zero filter in `w`
/// zeroes the direction filter.
pub fn filter_normalize(direction: &mut [f64], params: &ParameterSet, w: &[f64]) -> Result<()> {
    if direction.len() != w.len() || w.len() != params.len() {
        return Err(Error::Shape { op: "filter_normalize", shapes: vec![vec![params.len()], vec![direction.len()]] });
    }
    for info in params.infos() {
        let r = info.range();
        let (d, wt) = (&mut direction[r.clone()], &w[r]);
        let out = if info.shape.len() >= 2 { *info.shape.last().expect("rank >= 2") } else { 1 };
        for f in 0..out {
            let idx = (f..wt.len()).step_by(out);
            let wn = idx.clone().map(|i| wt[i] * wt[i]).sum::<f64>().sqrt();
            let dn = idx.clone().map(|i| d[i] * d[i]).sum::<f64>().sqrt();
            let s = if wn == 0.0 || dn == 0.0 { 0.0 } else { wn / dn };
            idx.for_each(|i| d[i] *= s);
        }
    }
    Ok(())
}

/// Gaussian direction from `seed`, filter-normalized against `w`.
pub fn random_direction(params: &ParameterSet, w: &[f64], seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d: Vec<f64> = (0..w.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    filter_normalize(&mut d, params, w)?;
    Ok(d)
}

/// Loss over the grid spanned by explicit directions. Non-finite losses are
/// stored as `+∞`.
pub fn landscape_from_directions<O: Objective + Sync + ?Sized>(
    obj: &O,
    w: &[f64],
    d1: Vec<f64>,
    d2: Vec<f64>,
    alphas: Vec<f64>,
    betas: Vec<f64>,
) -> Result<LandscapeGrid> {
    if d1.len() != w.len() || d2.len() != w.len() {
        return Err(Error::Shape { op: "landscape", shapes: vec![vec![w.len()], vec![d1.len()], vec![d2.len()]] });
    }
    let nb = betas.len();
    let loss = (0..alphas.len() * nb)
        .into_par_iter()
        .map(|cell| {
            let (a, b) = (alphas[cell / nb], betas[cell % nb]);
            let p: Vec<f64> = w.iter().zip(d1.iter().zip(&d2)).map(|(wi, (x, y))| wi + (a * x + b * y)).collect();
            match obj.loss(&p) {
                Ok(l) if l.is_finite() => Ok(l),
                Ok(_) | Err(Error::NonFinite(_)) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(LandscapeGrid { alphas, betas, d1, d2, loss })
}

pub fn landscape_grid<O: Objective + Sync + ?Sized>(
    obj: &O,
    params: &ParameterSet,
    w: &[f64],
    opts: &LandscapeOptions,
) -> Result<LandscapeGrid> {
    if opts.n < 2 {
        return Err(Error::InvalidConfig(format!("landscape grid needs n >= 2, got {}", opts.n)));
    }
    let d1 = random_direction(params, w, opts.seed)?;
    let d2 = random_direction(params, w, opts.seed.wrapping_add(1))?;
    let axis = grid_axis(opts.n, opts.range);
    landscape_from_directions(obj, w, d1, d2, axis.clone(), axis)
}

/// Format with 17 significant digits (round-trips any f64).
pub fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v.is_nan() {
        return "nan".into();
    }
    format!("{v:.16e}")
}

impl LandscapeGrid {
    pub fn n_cells(&self) -> usize {
        self.loss.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.loss[i * self.betas.len() + j]
    }

    /// `alpha,beta,loss` rows in row-major order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "alpha,beta,loss")?;
        for (i, a) in self.alphas.iter().enumerate() {
            for (j, b) in self.betas.iter().enumerate() {
                writeln!(out, "{},{},{}", fmt_f64(*a), fmt_f64(*b), fmt_f64(self.at(i, j)))?;
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("ascii")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::FnObjective;
    use crate::params::Role;
    use crate::tensor::{l2_norm, Tensor};

    #[test]
    fn axis_contains_zero() {
        let a = grid_axis(50, (-1.0, 1.0));
        assert_eq!(a.len(), 50);
        assert_eq!(a[25], 0.0);
    }

    #[test]
    fn filter_norms_match() {
        let mut p = ParameterSet::new();
        p.push("w", Role::Mlp, None, Tensor::new(vec![2, 3], vec![1.0, 0.0, 2.0, 1.0, 0.0, -2.0]).unwrap()).unwrap();
        p.push("b", Role::Mlp, None, Tensor::from_vec(vec![3.0, 4.0])).unwrap();
        let w = p.flat().to_vec();
        let mut d = vec![0.5, 1.0, -1.0, 0.25, 2.0, 3.0, 1.0, 1.0];
        filter_normalize(&mut d, &p, &w).unwrap();
        // column 0: |w| = √2; column 1: zero filter; column 2: √8
        assert!(((d[0] * d[0] + d[3] * d[3]).sqrt() - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!((d[1], d[4]), (0.0, 0.0));
        assert!(((d[2] * d[2] + d[5] * d[5]).sqrt() - 8f64.sqrt()).abs() < 1e-14);
        assert!((l2_norm(&d[6..]) - 5.0).abs() < 1e-14);
    }

    #[test]
    fn non_finite_cells_become_inf() {
        let obj = FnObjective::new(1, |w: &[f64]| if w[0] > 0.5 { f64::NAN } else { w[0] }, |_: &[f64]| vec![1.0]);
        let g = landscape_from_directions(&obj, &[0.0], vec![1.0], vec![0.0], vec![0.0, 1.0], vec![0.0]).unwrap();
        assert_eq!(g.loss, vec![0.0, f64::INFINITY]);
    }

    #[test]
    fn csv_format() {
        let g = LandscapeGrid { alphas: vec![0.1], betas: vec![-1.0], d1: vec![], d2: vec![], loss: vec![1.0 / 3.0] };
        let csv = g.to_csv();
        assert_eq!(csv, "alpha,beta,loss\n1.0000000000000001e-1,-1.0000000000000000e0,3.3333333333333331e-1\n");
        let parsed: f64 = csv.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(parsed, 1.0 / 3.0);
    }
}
