//! Primitive operations: forward evaluation and vector-Jacobian products.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Epsilon added to the variance in layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `[.., m, k] x [k, n]` (shared right operand) or `[.., m, k] x [.., k, n]`.
    MatMul,
    /// Elementwise add; the right operand may broadcast over leading axes.
    Add,
    /// Elementwise multiply with the same broadcasting rule as `Add`.
    Mul,
    Scale(f64),
    /// Swap the last two axes.
    Transpose,
    Permute(Vec<usize>),
    Reshape(Vec<usize>),
    /// Softmax over the last axis.
    Softmax,
    /// Layer normalization over the last axis, without affine parameters.
    LayerNorm,
    Gelu,
    Relu,
    Sigmoid,
    Log,
    Exp,
    Mean,
    Sum,
    /// Mean over one axis, which is removed from the shape.
    MeanAxis(usize),
    Concat(usize),
    Narrow { axis: usize, start: usize, len: usize },
    /// Broadcast extent-1 axes up to the target shape (same rank).
    Expand(Vec<usize>),
    /// NHWC input, `[kh, kw, c_in, c_out]` kernel.
    Conv2d { stride: usize, padding: usize },
    /// Mean over the batch of softmax cross-entropy; inputs are logits and
    /// target distributions, both `[batch, classes]`.
    SoftmaxCrossEntropy,
    /// Mean over the batch of per-class sigmoid binary cross-entropy, summed
    /// over classes.
    SigmoidCrossEntropy,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::Transpose => "transpose",
            Primitive::Permute(_) => "permute",
            Primitive::Reshape(_) => "reshape",
            Primitive::Softmax => "softmax",
            Primitive::LayerNorm => "layer_norm",
            Primitive::Gelu => "gelu",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Log => "log",
            Primitive::Exp => "exp",
            Primitive::Mean => "mean",
            Primitive::Sum => "sum",
            Primitive::MeanAxis(_) => "mean_axis",
            Primitive::Concat(_) => "concat",
            Primitive::Narrow { .. } => "narrow",
            Primitive::Expand(_) => "expand",
            Primitive::Conv2d { .. } => "conv2d",
            Primitive::SoftmaxCrossEntropy => "softmax_cross_entropy",
            Primitive::SigmoidCrossEntropy => "sigmoid_cross_entropy",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::MatMul
            | Primitive::Add
            | Primitive::Mul
            | Primitive::Conv2d { .. }
            | Primitive::SoftmaxCrossEntropy
            | Primitive::SigmoidCrossEntropy => Some(2),
            Primitive::Concat(_) => None,
            _ => Some(1),
        }
    }
}

fn mismatch(op: &Primitive, inputs: &[&Tensor]) -> Error {
    Error::Shape { op: op.name(), shapes: inputs.iter().map(|t| t.shape().to_vec()).collect() }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn gelu_prime(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

pub fn gelu_second(x: f64) -> f64 {
    normal_pdf(x) * (2.0 - x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn is_suffix(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

fn last_dim(t: &Tensor) -> usize {
    *t.shape().last().unwrap_or(&1)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let rank = shape.len();
    if rank == 0 {
        return (out_shape, data.to_vec());
    }
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..data.len() {
        out.push(data[src]);
        // odometer increment over the output index
        let mut ax = rank;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn transpose_perm(rank: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..rank).collect();
    perm.swap(rank - 2, rank - 1);
    perm
}

/// `c[m,n] += a[m,k] * b[k,n]`
fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,k] += g[m,n] * b[k,n]^T`
fn gemm_nt(g: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            c[i * k + p] += acc;
        }
    }
}

/// `c[k,n] += a[m,k]^T * g[m,n]`
fn gemm_tn(a: &[f64], g: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &gv) in crow.iter_mut().zip(grow) {
                *cv += av * gv;
            }
        }
    }
}

struct MatMulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_rhs: bool,
    out_shape: Vec<usize>,
}

fn matmul_dims(op: &Primitive, a: &Tensor, b: &Tensor) -> Result<MatMulDims> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() < 2 || sb.len() < 2 {
        return Err(mismatch(op, &[a, b]));
    }
    let m = sa[sa.len() - 2];
    let k = sa[sa.len() - 1];
    let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
    if k != kb {
        return Err(mismatch(op, &[a, b]));
    }
    let lead_a = &sa[..sa.len() - 2];
    let lead_b = &sb[..sb.len() - 2];
    let shared_rhs = lead_b.is_empty();
    if !shared_rhs && lead_a != lead_b {
        return Err(mismatch(op, &[a, b]));
    }
    let batch = lead_a.iter().product();
    let mut out_shape = lead_a.to_vec();
    out_shape.extend([m, n]);
    Ok(MatMulDims { batch, m, k, n, shared_rhs, out_shape })
}

fn conv_out(h: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if h + 2 * pad < k || stride == 0 {
        None
    } else {
        Some((h + 2 * pad - k) / stride + 1)
    }
}

/// Evaluate one primitive. Deterministic for identical inputs.
pub fn eval_primitive(op: &Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    if let Some(n) = op.arity() {
        if inputs.len() != n {
            return Err(mismatch(op, inputs));
        }
    } else if inputs.is_empty() {
        return Err(mismatch(op, inputs));
    }
    let x = inputs[0];
    match op {
        Primitive::MatMul => {
            let b = inputs[1];
            let d = matmul_dims(op, x, b)?;
            let mut out = vec![0.0; d.batch * d.m * d.n];
            let (sa, sb, sc) = (d.m * d.k, d.k * d.n, d.m * d.n);
            for i in 0..d.batch {
                let bs = if d.shared_rhs { &b.data()[..sb] } else { &b.data()[i * sb..(i + 1) * sb] };
                gemm_nn(&x.data()[i * sa..(i + 1) * sa], bs, &mut out[i * sc..(i + 1) * sc], d.m, d.k, d.n);
            }
            Tensor::new(d.out_shape, out)
        }
        Primitive::Add | Primitive::Mul => {
            let b = inputs[1];
            if !is_suffix(x.shape(), b.shape()) {
                return Err(mismatch(op, inputs));
            }
            let bl = b.len().max(1);
            let bd = b.data();
            let data: Vec<f64> = if matches!(op, Primitive::Add) {
                x.data().iter().enumerate().map(|(i, &v)| v + bd[i % bl]).collect()
            } else {
                x.data().iter().enumerate().map(|(i, &v)| v * bd[i % bl]).collect()
            };
            Tensor::new(x.shape().to_vec(), data)
        }
        Primitive::Scale(c) => Ok(x.map(|v| v * c)),
        Primitive::Transpose => {
            if x.rank() < 2 {
                return Err(mismatch(op, inputs));
            }
            let (shape, data) = permute_data(x.data(), x.shape(), &transpose_perm(x.rank()));
            Tensor::new(shape, data)
        }
        Primitive::Permute(perm) => {
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            if perm.len() != x.rank() || sorted.iter().enumerate().any(|(i, &p)| i != p) {
                return Err(mismatch(op, inputs));
            }
            let (shape, data) = permute_data(x.data(), x.shape(), perm);
            Tensor::new(shape, data)
        }
        Primitive::Reshape(shape) => {
            if shape.iter().product::<usize>() != x.len() {
                return Err(Error::Shape { op: "reshape", shapes: vec![x.shape().to_vec(), shape.clone()] });
            }
            Tensor::new(shape.clone(), x.data().to_vec())
        }
        Primitive::Softmax => {
            let n = last_dim(x);
            let mut out = x.data().to_vec();
            for row in out.chunks_mut(n) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
            Tensor::new(x.shape().to_vec(), out)
        }
        Primitive::LayerNorm => {
            let n = last_dim(x);
            let mut out = x.data().to_vec();
            for row in out.chunks_mut(n) {
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                for v in row.iter_mut() {
                    *v = (*v - mean) * inv;
                }
            }
            Tensor::new(x.shape().to_vec(), out)
        }
        Primitive::Gelu => Ok(x.map(gelu)),
        Primitive::Relu => Ok(x.map(|v| v.max(0.0))),
        Primitive::Sigmoid => Ok(x.map(sigmoid)),
        Primitive::Log => Ok(x.map(f64::ln)),
        Primitive::Exp => Ok(x.map(f64::exp)),
        Primitive::Mean => {
            if x.is_empty() {
                return Err(mismatch(op, inputs));
            }
            Ok(Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64))
        }
        Primitive::Sum => Ok(Tensor::scalar(x.data().iter().sum())),
        Primitive::MeanAxis(axis) => {
            let axis = *axis;
            if axis >= x.rank() {
                return Err(mismatch(op, inputs));
            }
            let s = x.shape();
            let outer: usize = s[..axis].iter().product();
            let n = s[axis];
            let inner: usize = s[axis + 1..].iter().product();
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for j in 0..n {
                    let src = &x.data()[(o * n + j) * inner..(o * n + j + 1) * inner];
                    for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
            for v in &mut out {
                *v /= n as f64;
            }
            let mut shape = s.to_vec();
            shape.remove(axis);
            Tensor::new(shape, out)
        }
        Primitive::Concat(axis) => {
            let axis = *axis;
            let first = inputs[0].shape();
            if axis >= first.len() {
                return Err(mismatch(op, inputs));
            }
            for t in inputs {
                let s = t.shape();
                if s.len() != first.len()
                    || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i])
                {
                    return Err(mismatch(op, inputs));
                }
            }
            let outer: usize = first[..axis].iter().product();
            let inner: usize = first[axis + 1..].iter().product();
            let total: usize = inputs.iter().map(|t| t.shape()[axis]).sum();
            let mut out = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for t in inputs {
                    let chunk = t.shape()[axis] * inner;
                    out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            let mut shape = first.to_vec();
            shape[axis] = total;
            Tensor::new(shape, out)
        }
        Primitive::Narrow { axis, start, len } => {
            let s = x.shape();
            if *axis >= s.len() || start + len > s[*axis] || *len == 0 {
                return Err(mismatch(op, inputs));
            }
            let outer: usize = s[..*axis].iter().product();
            let inner: usize = s[axis + 1..].iter().product();
            let n = s[*axis];
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * n + start) * inner;
                out.extend_from_slice(&x.data()[base..base + len * inner]);
            }
            let mut shape = s.to_vec();
            shape[*axis] = *len;
            Tensor::new(shape, out)
        }
        Primitive::Expand(target) => {
            let s = x.shape();
            if s.len() != target.len() || s.iter().zip(target).any(|(&a, &b)| a != b && a != 1) {
                return Err(mismatch(op, inputs));
            }
            let map = expand_index_map(s, target);
            Tensor::new(target.clone(), map.iter().map(|&i| x.data()[i]).collect())
        }
        Primitive::Conv2d { stride, padding } => {
            let w = inputs[1];
            let (sx, sw) = (x.shape(), w.shape());
            if sx.len() != 4 || sw.len() != 4 || sx[3] != sw[2] {
                return Err(mismatch(op, inputs));
            }
            let (b, h, wd, cin) = (sx[0], sx[1], sx[2], sx[3]);
            let (kh, kw, cout) = (sw[0], sw[1], sw[3]);
            let (Some(ho), Some(wo)) =
                (conv_out(h, kh, *stride, *padding), conv_out(wd, kw, *stride, *padding))
            else {
                return Err(mismatch(op, inputs));
            };
            let mut out = vec![0.0; b * ho * wo * cout];
            conv_forward(x.data(), w.data(), &mut out, [b, h, wd, cin], [kh, kw, cout], [ho, wo], *stride, *padding);
            Tensor::new(vec![b, ho, wo, cout], out)
        }
        Primitive::SoftmaxCrossEntropy | Primitive::SigmoidCrossEntropy => {
            let t = inputs[1];
            if x.rank() != 2 || x.shape() != t.shape() || x.shape()[0] == 0 {
                return Err(mismatch(op, inputs));
            }
            let (b, k) = (x.shape()[0], x.shape()[1]);
            let mut total = 0.0;
            for i in 0..b {
                let z = &x.data()[i * k..(i + 1) * k];
                let y = &t.data()[i * k..(i + 1) * k];
                if matches!(op, Primitive::SoftmaxCrossEntropy) {
                    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    total += z.iter().zip(y).map(|(zv, yv)| yv * (lse - zv)).sum::<f64>();
                } else {
                    total += z.iter().zip(y).map(|(&zv, &yv)| softplus(zv) - yv * zv).sum::<f64>();
                }
            }
            Ok(Tensor::scalar(total / b as f64))
        }
    }
}

fn expand_index_map(src: &[usize], target: &[usize]) -> Vec<usize> {
    let src_strides = strides(src);
    let n: usize = target.iter().product();
    let mut map = Vec::with_capacity(n);
    let rank = target.len();
    let mut idx = vec![0usize; rank];
    for _ in 0..n {
        let mut off = 0;
        for ax in 0..rank {
            if src[ax] != 1 {
                off += idx[ax] * src_strides[ax];
            }
        }
        map.push(off);
        let mut ax = rank;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            if idx[ax] < target[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    map
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    w: &[f64],
    out: &mut [f64],
    [b, h, wd, cin]: [usize; 4],
    [kh, kw, cout]: [usize; 3],
    [ho, wo]: [usize; 2],
    stride: usize,
    pad: usize,
) {
    for n in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                let obase = ((n * ho + oy) * wo + ox) * cout;
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let ibase = ((n * h + iy as usize) * wd + ix as usize) * cin;
                        let wbase = (ky * kw + kx) * cin * cout;
                        for c in 0..cin {
                            let xv = x[ibase + c];
                            if xv == 0.0 {
                                continue;
                            }
                            let wrow = &w[wbase + c * cout..wbase + (c + 1) * cout];
                            for (o, &wv) in out[obase..obase + cout].iter_mut().zip(wrow) {
                                *o += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Vector-Jacobian products of `op` with respect to each input flagged in `needs`.
pub fn vjp(
    op: &Primitive,
    inputs: &[&Tensor],
    output: &Tensor,
    grad: &Tensor,
    needs: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    let x = inputs[0];
    let mut grads: Vec<Option<Tensor>> = vec![None; inputs.len()];
    let same_shape = |data: Vec<f64>| Tensor::new(x.shape().to_vec(), data);
    match op {
        Primitive::MatMul => {
            let b = inputs[1];
            let d = matmul_dims(op, x, b)?;
            let (sa, sb, sc) = (d.m * d.k, d.k * d.n, d.m * d.n);
            if needs[0] {
                let mut ga = vec![0.0; x.len()];
                for i in 0..d.batch {
                    let bs = if d.shared_rhs { &b.data()[..sb] } else { &b.data()[i * sb..(i + 1) * sb] };
                    gemm_nt(&grad.data()[i * sc..(i + 1) * sc], bs, &mut ga[i * sa..(i + 1) * sa], d.m, d.k, d.n);
                }
                grads[0] = Some(same_shape(ga)?);
            }
            if needs[1] {
                let mut gb = vec![0.0; b.len()];
                for i in 0..d.batch {
                    let target = if d.shared_rhs { &mut gb[..] } else { &mut gb[i * sb..(i + 1) * sb] };
                    gemm_tn(&x.data()[i * sa..(i + 1) * sa], &grad.data()[i * sc..(i + 1) * sc], target, d.m, d.k, d.n);
                }
                grads[1] = Some(Tensor::new(b.shape().to_vec(), gb)?);
            }
        }
        Primitive::Add | Primitive::Mul => {
            let b = inputs[1];
            let bl = b.len().max(1);
            let is_add = matches!(op, Primitive::Add);
            if needs[0] {
                let ga = if is_add {
                    grad.data().to_vec()
                } else {
                    grad.data().iter().enumerate().map(|(i, g)| g * b.data()[i % bl]).collect()
                };
                grads[0] = Some(same_shape(ga)?);
            }
            if needs[1] {
                let mut gb = vec![0.0; b.len()];
                for (i, g) in grad.data().iter().enumerate() {
                    gb[i % bl] += if is_add { *g } else { g * x.data()[i] };
                }
                grads[1] = Some(Tensor::new(b.shape().to_vec(), gb)?);
            }
        }
        Primitive::Scale(c) => grads[0] = Some(grad.map(|g| g * c)),
        Primitive::Transpose => {
            let (_, data) = permute_data(grad.data(), grad.shape(), &transpose_perm(grad.rank()));
            grads[0] = Some(same_shape(data)?);
        }
        Primitive::Permute(perm) => {
            let (_, data) = permute_data(grad.data(), grad.shape(), &inverse_perm(perm));
            grads[0] = Some(same_shape(data)?);
        }
        Primitive::Reshape(_) => grads[0] = Some(same_shape(grad.data().to_vec())?),
        Primitive::Softmax => {
            let n = last_dim(x);
            let mut gx = vec![0.0; x.len()];
            for ((gr, yr), out) in grad.data().chunks(n).zip(output.data().chunks(n)).zip(gx.chunks_mut(n)) {
                let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                for ((o, g), y) in out.iter_mut().zip(gr).zip(yr) {
                    *o = y * (g - dot);
                }
            }
            grads[0] = Some(same_shape(gx)?);
        }
        Primitive::LayerNorm => {
            let n = last_dim(x);
            let nf = n as f64;
            let mut gx = vec![0.0; x.len()];
            for (((xr, yr), gr), out) in x
                .data()
                .chunks(n)
                .zip(output.data().chunks(n))
                .zip(grad.data().chunks(n))
                .zip(gx.chunks_mut(n))
            {
                let mean = xr.iter().sum::<f64>() / nf;
                let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                let gmean = gr.iter().sum::<f64>() / nf;
                let gy = gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / nf;
                for ((o, g), y) in out.iter_mut().zip(gr).zip(yr) {
                    *o = inv * (g - gmean - y * gy);
                }
            }
            grads[0] = Some(same_shape(gx)?);
        }
        Primitive::Gelu => {
            grads[0] = Some(same_shape(x.data().iter().zip(grad.data()).map(|(&v, g)| g * gelu_prime(v)).collect())?)
        }
        Primitive::Relu => {
            grads[0] = Some(same_shape(
                x.data().iter().zip(grad.data()).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect(),
            )?)
        }
        Primitive::Sigmoid => {
            grads[0] =
                Some(same_shape(output.data().iter().zip(grad.data()).map(|(s, g)| g * s * (1.0 - s)).collect())?)
        }
        Primitive::Log => {
            grads[0] = Some(same_shape(x.data().iter().zip(grad.data()).map(|(v, g)| g / v).collect())?)
        }
        Primitive::Exp => {
            grads[0] = Some(same_shape(output.data().iter().zip(grad.data()).map(|(e, g)| g * e).collect())?)
        }
        Primitive::Mean => {
            let g = grad.item() / x.len() as f64;
            grads[0] = Some(Tensor::full(x.shape(), g));
        }
        Primitive::Sum => grads[0] = Some(Tensor::full(x.shape(), grad.item())),
        Primitive::MeanAxis(axis) => {
            let s = x.shape();
            let outer: usize = s[..*axis].iter().product();
            let n = s[*axis];
            let inner: usize = s[axis + 1..].iter().product();
            let mut gx = vec![0.0; x.len()];
            for o in 0..outer {
                let src = &grad.data()[o * inner..(o + 1) * inner];
                for j in 0..n {
                    for (d, &g) in gx[(o * n + j) * inner..(o * n + j + 1) * inner].iter_mut().zip(src) {
                        *d = g / n as f64;
                    }
                }
            }
            grads[0] = Some(same_shape(gx)?);
        }
        Primitive::Concat(axis) => {
            let first = inputs[0].shape();
            let outer: usize = first[..*axis].iter().product();
            let inner: usize = first[axis + 1..].iter().product();
            let total = grad.shape()[*axis];
            let mut offset = 0;
            for (i, t) in inputs.iter().enumerate() {
                let len = t.shape()[*axis];
                if needs[i] {
                    let mut g = Vec::with_capacity(t.len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        g.extend_from_slice(&grad.data()[base..base + len * inner]);
                    }
                    grads[i] = Some(Tensor::new(t.shape().to_vec(), g)?);
                }
                offset += len;
            }
        }
        Primitive::Narrow { axis, start, len } => {
            let s = x.shape();
            let outer: usize = s[..*axis].iter().product();
            let inner: usize = s[axis + 1..].iter().product();
            let n = s[*axis];
            let mut gx = vec![0.0; x.len()];
            for o in 0..outer {
                let base = (o * n + start) * inner;
                gx[base..base + len * inner].copy_from_slice(&grad.data()[o * len * inner..(o + 1) * len * inner]);
            }
            grads[0] = Some(same_shape(gx)?);
        }
        Primitive::Expand(target) => {
            let map = expand_index_map(x.shape(), target);
            let mut gx = vec![0.0; x.len()];
            for (&i, g) in map.iter().zip(grad.data()) {
                gx[i] += g;
            }
            grads[0] = Some(same_shape(gx)?);
        }
        Primitive::Conv2d { stride, padding } => {
            let w = inputs[1];
            let (sx, sw) = (x.shape(), w.shape());
            let (b, h, wd, cin) = (sx[0], sx[1], sx[2], sx[3]);
            let (kh, kw, cout) = (sw[0], sw[1], sw[3]);
            let (ho, wo) = (output.shape()[1], output.shape()[2]);
            let mut gx = vec![0.0; if needs[0] { x.len() } else { 0 }];
            let mut gw = vec![0.0; if needs[1] { w.len() } else { 0 }];
            let (stride, pad) = (*stride, *padding);
            for n in 0..b {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let gbase = ((n * ho + oy) * wo + ox) * cout;
                        let grow = &grad.data()[gbase..gbase + cout];
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let ibase = ((n * h + iy as usize) * wd + ix as usize) * cin;
                                let wbase = (ky * kw + kx) * cin * cout;
                                for c in 0..cin {
                                    let wrow = wbase + c * cout;
                                    if needs[0] {
                                        let s: f64 =
                                            grow.iter().zip(&w.data()[wrow..wrow + cout]).map(|(g, wv)| g * wv).sum();
                                        gx[ibase + c] += s;
                                    }
                                    if needs[1] {
                                        let xv = x.data()[ibase + c];
                                        for (gwv, g) in gw[wrow..wrow + cout].iter_mut().zip(grow) {
                                            *gwv += xv * g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if needs[0] {
                grads[0] = Some(same_shape(gx)?);
            }
            if needs[1] {
                grads[1] = Some(Tensor::new(w.shape().to_vec(), gw)?);
            }
        }
        Primitive::SoftmaxCrossEntropy | Primitive::SigmoidCrossEntropy => {
            let t = inputs[1];
            let (b, k) = (x.shape()[0], x.shape()[1]);
            let scale = grad.item() / b as f64;
            if needs[0] {
                let mut gx = vec![0.0; x.len()];
                for i in 0..b {
                    let z = &x.data()[i * k..(i + 1) * k];
                    let y = &t.data()[i * k..(i + 1) * k];
                    let out = &mut gx[i * k..(i + 1) * k];
                    if matches!(op, Primitive::SoftmaxCrossEntropy) {
                        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                        let total: f64 = e.iter().sum();
                        let mass: f64 = y.iter().sum();
                        for ((o, ev), yv) in out.iter_mut().zip(&e).zip(y) {
                            *o = scale * (mass * ev / total - yv);
                        }
                    } else {
                        for ((o, &zv), yv) in out.iter_mut().zip(z).zip(y) {
                            *o = scale * (sigmoid(zv) - yv);
                        }
                    }
                }
                grads[0] = Some(same_shape(gx)?);
            }
            if needs[1] {
                let mut gt = vec![0.0; t.len()];
                for i in 0..b {
                    let z = &x.data()[i * k..(i + 1) * k];
                    let out = &mut gt[i * k..(i + 1) * k];
                    if matches!(op, Primitive::SoftmaxCrossEntropy) {
                        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                        for (o, zv) in out.iter_mut().zip(z) {
                            *o = scale * (lse - zv);
                        }
                    } else {
                        for (o, zv) in out.iter_mut().zip(z) {
                            *o = -scale * zv;
                        }
                    }
                }
                grads[1] = Some(Tensor::new(t.shape().to_vec(), gt)?);
            }
        }
    }
    Ok(grads)
}
