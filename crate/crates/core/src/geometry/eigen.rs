//! Cyclic Jacobi eigensolver for small dense symmetric matrices.

use crate::error::{Error, Result};

/// Off-diagonal Frobenius norm (relative to the full norm) at which
/// the sweeps stop.
pub const JACOBI_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues in descending order with unit eigenvectors (`vectors[i]`
/// belongs to `values[i]`).
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

fn off_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Eigendecomposition of the row-major symmetric `n x n` matrix `a`.
pub fn jacobi_eigen(a: &[f64], n: usize) -> Result<SymEigen> {
    if a.len() != n * n {
        return Err(Error::Shape { op: "jacobi_eigen", shapes: vec![vec![n, n], vec![a.len()]] });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix entry".into()));
    }
    let mut m = a.to_vec();
    // symmetrize against rounding in the caller's assembly
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = s;
            m[j * n + i] = s;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = JACOBI_TOL * total.max(f64::MIN_POSITIVE);
    for _ in 0..MAX_SWEEPS {
        if off_norm(&m, n) <= target {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    Ok(SymEigen {
        values: order.iter().map(|&i| m[i * n + i]).collect(),
        vectors: order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect(),
    })
}
