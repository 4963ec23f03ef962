//! Neuron sparsity, activation norms and the linearity (missing-rate) probe.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::tensor::{l2_norm, Tensor};

/// Examples per forward pass in the diagnostics below.
pub const EVAL_CHUNK: usize = 64;

fn batch_len(images: &Tensor) -> usize {
    images.shape().first().copied().unwrap_or(0)
}

/// Per block, the fraction of pre-activation entries greater than zero,
/// pooled over every activation site in the block and every example.
pub fn active_fraction(model: &Model, images: &Tensor) -> Result<Vec<f64>> {
    let n = batch_len(images);
    let blocks = model.spec().num_layers;
    let mut pos = vec![0usize; blocks];
    let mut total = vec![0usize; blocks];
    for start in (0..n).step_by(EVAL_CHUNK) {
        let chunk = images.index_range(start, (start + EVAL_CHUNK).min(n));
        let (_, trace) = model.forward_with_trace(&chunk, Mode::Eval)?;
        for (k, b) in trace.blocks.iter().enumerate() {
            for h in &b.pre_activations {
                pos[k] += h.data().iter().filter(|&&v| v > 0.0).count();
                total[k] += h.len();
            }
        }
    }
    Ok(pos.iter().zip(&total).map(|(&p, &t)| if t == 0 { 0.0 } else { p as f64 / t as f64 }).collect())
}

/// Per block, the mean over examples of `‖a_k‖₂` (all activation sites of
/// the block concatenated).
pub fn activation_norms(model: &Model, images: &Tensor) -> Result<Vec<f64>> {
    let n = batch_len(images);
    let mut sums = vec![0.0; model.spec().num_layers];
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let chunk = images.index_range(start, end);
        let (_, trace) = model.forward_with_trace(&chunk, Mode::Eval)?;
        for (k, b) in trace.blocks.iter().enumerate() {
            for e in 0..end - start {
                let sq: f64 = b.activations.iter().map(|a| l2_norm(a.index_leading(e).data()).powi(2)).sum();
                sums[k] += sq.sqrt();
            }
        }
    }
    Ok(sums.iter().map(|s| if n == 0 { 0.0 } else { s / n as f64 }).collect())
}

fn midpoints(images: &Tensor, pairs: &[(usize, usize)]) -> Result<Tensor> {
    let items: Vec<Tensor> = pairs
        .iter()
        .map(|&(i, j)| {
            let (a, b) = (images.index_leading(i), images.index_leading(j));
            let data = a.data().iter().zip(b.data()).map(|(x, y)| 0.5 * x + 0.5 * y).collect();
            Tensor::new(a.shape().to_vec(), data)
        })
        .collect::<Result<_>>()?;
    Tensor::stack(&items)
}

fn check_classes(labels: &[usize]) -> Result<()> {
    let distinct: BTreeSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::InvalidConfig("missing rate needs at least two classes in the dataset".into()));
    }
    Ok(())
}

/// Fraction of `pairs` whose midpoint prediction is outside `{y_i, y_j}`.
pub fn missing_rate_of_pairs<P>(predict: P, images: &Tensor, labels: &[usize], pairs: &[(usize, usize)]) -> Result<f64>
where
    P: Fn(&Tensor) -> Result<Vec<usize>>,
{
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("missing rate needs at least one pair".into()));
    }
    let mut misses = 0usize;
    for chunk in pairs.chunks(EVAL_CHUNK) {
        let preds = predict(&midpoints(images, chunk)?)?;
        misses += chunk.iter().zip(&preds).filter(|(&(i, j), &p)| p != labels[i] && p != labels[j]).count();
    }
    Ok(misses as f64 / pairs.len() as f64)
}

/// `count` random index pairs with distinct labels (seeded).
pub fn sample_label_pairs(labels: &[usize], count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    check_classes(labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = labels.len();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if labels[i] != labels[j] {
            out.push((i, j));
        }
    }
    Ok(out)
}

/// Every unordered pair `i < j` with distinct labels.
pub fn all_label_pairs(labels: &[usize]) -> Result<Vec<(usize, usize)>> {
    check_classes(labels)?;
    let n = labels.len();
    Ok((0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| labels[i] != labels[j]).collect())
}

/// Missing rate `R` over `pairs` random label-distinct pairs.
pub fn missing_rate(model: &Model, images: &Tensor, labels: &[usize], pairs: usize, seed: u64) -> Result<f64> {
    let p = sample_label_pairs(labels, pairs, seed)?;
    missing_rate_of_pairs(|x| model.predict(x), images, labels, &p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_class_is_an_error() {
        assert!(sample_label_pairs(&[1, 1, 1], 3, 0).is_err());
    }

    #[test]
    fn exhaustive_pairs() {
        assert_eq!(all_label_pairs(&[0, 0, 1]).unwrap(), vec![(0, 2), (1, 2)]);
    }

    #[test]
    fn binary_labels_never_miss() {
        let x = Tensor::zeros(&[4, 1, 1, 1]);
        let labels = [0, 1, 0, 1];
        let pairs = sample_label_pairs(&labels, 50, 1).unwrap();
        let r = missing_rate_of_pairs(|t| Ok(vec![1; t.shape()[0]]), &x, &labels, &pairs).unwrap();
        assert_eq!(r, 0.0);
    }
}
