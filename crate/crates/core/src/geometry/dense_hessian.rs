//! Exact Hessian of a bias-free MLP loss, assembled from the per-layer
//! backward recursion on pre-activation Hessians.
//!
//! For layer `k` with `h_k = a_{k-1} W_k` (`W_k` stored `[fan_in, fan_out]`)
//! and `a_k = f(h_k)`:
//!
//! ```text
//! 𝓗_K = ∂²ℓ/∂z²                       (z = h_K, the logits)
//! 𝓗_k = B_k W_{k+1} 𝓗_{k+1} W_{k+1}ᵀ B_k + D_k
//! B_k = diag f'(h_k),  D_k = diag(f''(h_k) ⊙ ∂ℓ/∂a_k)
//! H_kk = (a_{k-1} a_{k-1}ᵀ) ⊗ 𝓗_k
//! ```
//!
//! Row-major `W[p, q]` sits at flat index `p * fan_out + q`, so the Kronecker
//! product above is the diagonal block verbatim. Off-diagonal blocks
//! (`j < k`) follow from differentiating `∂ℓ/∂W_k = a_{k-1} δ_kᵀ` through `h_j`:
//!
//! ```text
//! H_kj[(p,q),(r,s)] = a_{j-1,r} ( (∂a_{k-1}/∂h_j)[p,s] δ_{k,q} + a_{k-1,p} (𝓗_k ∂h_k/∂h_j)[q,s] )
//! ```

use crate::autodiff::primitive::{gelu_prime, gelu_second, sigmoid};
use crate::error::{Error, Result};
use crate::geometry::eigen::{jacobi_eigen, SymEigen};
use crate::model::{Activation, Family, LossKind, Mode, Model};
use crate::tensor::Tensor;

/// Largest MLP (in parameters) the dense assembly accepts.
pub const MAX_DENSE_PARAMS: usize = 5000;

#[derive(Clone, Debug)]
pub struct LayerBlock {
    pub name: String,
    pub offset: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl LayerBlock {
    pub fn len(&self) -> usize {
        self.fan_in * self.fan_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Recursion factors of one example.
#[derive(Clone, Debug)]
pub struct ExampleFactors {
    /// `a_{k-1}`, the input of each layer.
    pub inputs: Vec<Vec<f64>>,
    /// `𝓗_k`, `[fan_out, fan_out]` per layer.
    pub pre_hessians: Vec<Tensor>,
    /// Diagonal of `B_k` for each hidden layer.
    pub b: Vec<Vec<f64>>,
    /// Diagonal of `D_k` for each hidden layer.
    pub d: Vec<Vec<f64>>,
}

/// Batch-averaged Hessian of the training loss over all MLP weights.
#[derive(Clone, Debug)]
pub struct DenseHessian {
    pub dim: usize,
    /// Row-major `dim x dim`.
    pub matrix: Vec<f64>,
    pub layers: Vec<LayerBlock>,
    pub examples: Vec<ExampleFactors>,
}

/// Kronecker product of row-major `a` (`m x n`) and `b` (`p x q`).
pub fn kron(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::Shape { op: "kron", shapes: vec![a.shape().to_vec(), b.shape().to_vec()] });
    }
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let (p, q) = (b.shape()[0], b.shape()[1]);
    let mut out = vec![0.0; m * p * n * q];
    for i in 0..m {
        for j in 0..n {
            let aij = a.data()[i * n + j];
            for k in 0..p {
                for l in 0..q {
                    out[(i * p + k) * (n * q) + j * q + l] = aij * b.data()[k * q + l];
                }
            }
        }
    }
    Tensor::new(vec![m * p, n * q], out)
}

impl DenseHessian {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.dim + j]
    }

    /// Diagonal block `H_k` of layer `k` (0-based).
    pub fn block(&self, k: usize) -> Tensor {
        self.sub_block(k, k)
    }

    /// Block `(k, j)`: rows from layer `k`, columns from layer `j`.
    pub fn sub_block(&self, k: usize, j: usize) -> Tensor {
        let (rk, rj) = (self.layers[k].range(), self.layers[j].range());
        let mut data = Vec::with_capacity(rk.len() * rj.len());
        for r in rk.clone() {
            data.extend_from_slice(&self.matrix[r * self.dim + rj.start..r * self.dim + rj.end]);
        }
        Tensor::new(vec![rk.len(), rj.len()], data).expect("block layout")
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        self.matrix.chunks(self.dim).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    /// `max |H - Hᵀ|`.
    pub fn symmetry_error(&self) -> f64 {
        let n = self.dim;
        let mut e: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                e = e.max((self.matrix[i * n + j] - self.matrix[j * n + i]).abs());
            }
        }
        e
    }

    /// Full eigendecomposition via cyclic Jacobi (intended for small MLPs).
    pub fn eigen(&self) -> Result<SymEigen> {
        jacobi_eigen(&self.matrix, self.dim)
    }
}

fn derivs(act: Activation, h: f64) -> (f64, f64) {
    match act {
        Activation::Gelu => (gelu_prime(h), gelu_second(h)),
        Activation::Relu => (if h > 0.0 { 1.0 } else { 0.0 }, 0.0),
    }
}

/// `out = M A` for row-major `M` (`m x n`) and `A` (`n x p`).
fn mm(m: &[f64], a: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for k in 0..inner {
            let v = m[i * inner + k];
            if v != 0.0 {
                for j in 0..cols {
                    out[i * cols + j] += v * a[k * cols + j];
                }
            }
        }
    }
    out
}

/// Dense Hessian of the batch-mean loss of a bias-free MLP.
pub fn mlp_hessian_dense(model: &Model, images: &Tensor, targets: &Tensor, loss: LossKind) -> Result<DenseHessian> {
    let spec = model.spec();
    if spec.family != Family::Mlp {
        return Err(Error::Unsupported(format!("dense Hessian needs an MLP, got {:?}", spec.family)));
    }
    let dim = model.params().len();
    if dim > MAX_DENSE_PARAMS {
        return Err(Error::Unsupported(format!("{dim} parameters exceed the dense limit of {MAX_DENSE_PARAMS}")));
    }
    let batch = images.shape().first().copied().unwrap_or(0);
    let classes = spec.num_classes;
    if targets.shape() != [batch, classes] {
        return Err(Error::Shape { op: "mlp_hessian_dense", shapes: vec![vec![batch, classes], targets.shape().to_vec()] });
    }
    let (logits, trace) = model.forward_with_trace(images, Mode::Eval)?;
    let layers: Vec<LayerBlock> = model
        .params()
        .infos()
        .iter()
        .map(|p| LayerBlock { name: p.name.clone(), offset: p.offset, fan_in: p.shape[0], fan_out: p.shape[1] })
        .collect();
    let nl = layers.len();
    let weights: Vec<&[f64]> = (0..nl).map(|k| model.params().slice(k)).collect();
    let in_dim = spec.input_dim();
    let mut matrix = vec![0.0; dim * dim];
    let mut examples = Vec::with_capacity(batch);
    let inv_b = 1.0 / batch as f64;

    for e in 0..batch {
        // forward values: inputs a_{k-1} and pre-activations h_k (hidden layers only)
        let mut inputs = vec![images.data()[e * in_dim..(e + 1) * in_dim].to_vec()];
        let mut pre = Vec::with_capacity(nl - 1);
        for (k, blk) in trace.blocks.iter().enumerate() {
            let n = layers[k].fan_out;
            pre.push(blk.pre_activations[0].data()[e * n..(e + 1) * n].to_vec());
            inputs.push(blk.activations[0].data()[e * n..(e + 1) * n].to_vec());
        }
        let z = &logits.data()[e * classes..(e + 1) * classes];
        let y = &targets.data()[e * classes..(e + 1) * classes];

        // output gradient and Hessian
        let mut top_h = vec![0.0; classes * classes];
        let top_g: Vec<f64> = match loss {
            LossKind::SoftmaxCe => {
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                let s: f64 = ex.iter().sum();
                let p: Vec<f64> = ex.iter().map(|v| v / s).collect();
                let mass: f64 = y.iter().sum();
                for i in 0..classes {
                    for j in 0..classes {
                        top_h[i * classes + j] = mass * (if i == j { p[i] } else { 0.0 } - p[i] * p[j]);
                    }
                }
                p.iter().zip(y).map(|(pi, yi)| mass * pi - yi).collect()
            }
            LossKind::Sigmoid => {
                let s: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
                for i in 0..classes {
                    top_h[i * classes + i] = s[i] * (1.0 - s[i]);
                }
                s.iter().zip(y).map(|(si, yi)| si - yi).collect()
            }
        };

        // backward recursion: deltas δ_k and pre-activation Hessians 𝓗_k
        let mut deltas = vec![Vec::new(); nl];
        let mut hs = vec![Vec::new(); nl];
        let mut bs = vec![Vec::new(); nl - 1];
        let mut ds = vec![Vec::new(); nl - 1];
        deltas[nl - 1] = top_g;
        hs[nl - 1] = top_h;
        for k in (0..nl - 1).rev() {
            let w = weights[k + 1];
            let (n, m) = (layers[k + 1].fan_in, layers[k + 1].fan_out);
            let da: Vec<f64> = (0..n).map(|p| (0..m).map(|q| w[p * m + q] * deltas[k + 1][q]).sum()).collect();
            let (b, f2): (Vec<f64>, Vec<f64>) = pre[k].iter().map(|&h| derivs(spec.activation, h)).unzip();
            let d: Vec<f64> = f2.iter().zip(&da).map(|(a, b)| a * b).collect();
            // W 𝓗_{k+1} Wᵀ
            let wh = mm(w, &hs[k + 1], n, m, m);
            let mut wt = vec![0.0; m * n];
            for p in 0..n {
                for q in 0..m {
                    wt[q * n + p] = w[p * m + q];
                }
            }
            let mut hk = mm(&wh, &wt, n, m, n);
            for p in 0..n {
                for r in 0..n {
                    hk[p * n + r] *= b[p] * b[r];
                }
                hk[p * n + p] += d[p];
            }
            deltas[k] = b.iter().zip(&da).map(|(a, b)| a * b).collect();
            hs[k] = hk;
            bs[k] = b;
            ds[k] = d;
        }

        // diagonal blocks
        for k in 0..nl {
            let LayerBlock { offset, fan_in: n, fan_out: m, .. } = layers[k];
            let a = &inputs[k];
            for p in 0..n {
                for q in 0..m {
                    let row = (offset + p * m + q) * dim + offset;
                    let apq = a[p] * inv_b;
                    if apq == 0.0 {
                        continue;
                    }
                    for r in 0..n {
                        let c = apq * a[r];
                        for s in 0..m {
                            matrix[row + r * m + s] += c * hs[k][q * m + s];
                        }
                    }
                }
            }
        }

        // cross blocks k > j, mirrored into (j, k)
        for j in 0..nl - 1 {
            let nj = layers[j].fan_out;
            // A = ∂a_m/∂h_j for m = j.. ; J = ∂h_k/∂h_j
            let mut amat: Vec<f64> = vec![0.0; nj * nj];
            for s in 0..nj {
                amat[s * nj + s] = bs[j][s];
            }
            for k in j + 1..nl {
                let (n, m) = (layers[k].fan_in, layers[k].fan_out);
                // J_{k<-j}[q,s] = Σ_p W_k[p,q] A[p,s]
                let w = weights[k];
                let mut jac = vec![0.0; m * nj];
                for p in 0..n {
                    for q in 0..m {
                        let wpq = w[p * m + q];
                        if wpq != 0.0 {
                            for s in 0..nj {
                                jac[q * nj + s] += wpq * amat[p * nj + s];
                            }
                        }
                    }
                }
                let hj = mm(&hs[k], &jac, m, m, nj);
                let (ok, oj) = (layers[k].offset, layers[j].offset);
                let (nin_j, a_k, a_j) = (layers[j].fan_in, &inputs[k], &inputs[j]);
                for p in 0..n {
                    for q in 0..m {
                        let row = ok + p * m + q;
                        for r in 0..nin_j {
                            if a_j[r] == 0.0 {
                                continue;
                            }
                            for s in 0..nj {
                                let v = inv_b
                                    * a_j[r]
                                    * (amat[p * nj + s] * deltas[k][q] + a_k[p] * hj[q * nj + s]);
                                let col = oj + r * nj + s;
                                matrix[row * dim + col] += v;
                                matrix[col * dim + row] += v;
                            }
                        }
                    }
                }
                if k < nl - 1 {
                    // A_{k<-j} = diag(f'(h_k)) J_{k<-j}
                    let mut next = jac;
                    for q in 0..m {
                        for s in 0..nj {
                            next[q * nj + s] *= bs[k][q];
                        }
                    }
                    amat = next;
                }
            }
        }

        examples.push(ExampleFactors {
            inputs,
            pre_hessians: hs
                .into_iter()
                .zip(&layers)
                .map(|(h, l)| Tensor::new(vec![l.fan_out, l.fan_out], h).expect("square"))
                .collect(),
            b: bs,
            d: ds,
        });
    }
    Ok(DenseHessian { dim, matrix, layers, examples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, one_hot, ModelSpec};

    #[test]
    fn kron_small() {
        let a = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let k = kron(&a, &b).unwrap();
        assert_eq!(k.shape(), &[2, 2]);
        assert_eq!(k.data(), &[3.0, 6.0, 4.0, 8.0]);
    }

    #[test]
    fn relu_network_has_no_d_term() {
        let mut spec = ModelSpec::mlp(2, 1, 3, 1, 2);
        spec.activation = Activation::Relu;
        let m = build_model(&spec, 0).unwrap();
        let x = Tensor::new(vec![1, 2, 2, 1], vec![0.3, -0.2, 0.9, 0.1]).unwrap();
        let h = mlp_hessian_dense(&m, &x, &one_hot(&[1], 2), LossKind::SoftmaxCe).unwrap();
        assert!(h.examples[0].d.iter().flatten().all(|&v| v == 0.0));
        assert!(h.symmetry_error() < 1e-12);
    }

    #[test]
    fn rejects_non_mlp() {
        let spec = ModelSpec::preset("tiny-vit").unwrap();
        let m = build_model(&spec, 0).unwrap();
        let x = Tensor::zeros(&[1, 8, 8, 3]);
        assert!(matches!(mlp_hessian_dense(&m, &x, &one_hot(&[0], 2), LossKind::SoftmaxCe), Err(Error::Unsupported(_))));
    }
}
