//! Missing rate of midpoint predictions against counting oracles.

mod common;

use common::*;
use sharpgeo::geometry::{all_label_pairs, missing_rate, missing_rate_of_pairs, sample_label_pairs};
use sharpgeo::model::ModelSpec;
use sharpgeo::Tensor;

#[test]
fn two_class_models_never_miss() {
    for seed in 0..3 {
        let spec = ModelSpec::preset("tiny-vit").unwrap();
        let model = random_model(&spec, seed, 0.5);
        let x = random_images(40, &spec, seed);
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        assert_eq!(missing_rate(&model, &x, &labels, 500, seed).unwrap(), 0.0);
    }
}

#[test]
fn constant_predictor_misses_a_third() {
    let n = 300;
    let x = Tensor::zeros(&[n, 1, 1, 1]);
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let pairs = sample_label_pairs(&labels, 10_000, 7).unwrap();
    let r = missing_rate_of_pairs(|b: &Tensor| Ok(vec![0; b.shape()[0]]), &x, &labels, &pairs).unwrap();
    let p: f64 = 1.0 / 3.0;
    let sigma = (p * (1.0 - p) / 10_000.0).sqrt();
    assert!((r - p).abs() <= 3.0 * sigma, "R = {r}");
}

#[test]
fn exhaustive_twelve_points() {
    // points on a line, labelled by thirds; the predictor thresholds the
    // midpoint value, so a pair misses only when its midpoint falls in the
    // middle third and neither endpoint is labelled 1
    let vals: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
    let labels: Vec<usize> = (0..12).map(|i| i / 4).collect();
    let x = Tensor::new(vec![12, 1, 1, 1], vals.clone()).unwrap();
    let classify = |v: f64| if v < 1.0 / 3.0 { 0 } else if v < 2.0 / 3.0 { 1 } else { 2 };
    let pairs = all_label_pairs(&labels).unwrap();
    let mut misses = 0;
    for &(i, j) in &pairs {
        let mid = 0.5 * vals[i] + 0.5 * vals[j];
        let c = classify(mid);
        if c != labels[i] && c != labels[j] {
            misses += 1;
        }
    }
    let expect = misses as f64 / pairs.len() as f64;
    assert_eq!(pairs.len(), 48);
    let r = missing_rate_of_pairs(|b: &Tensor| Ok(b.data().iter().map(|v| classify(*v)).collect()), &x, &labels, &pairs)
        .unwrap();
    assert_eq!(r, expect);
    assert!(expect > 0.0);
}
