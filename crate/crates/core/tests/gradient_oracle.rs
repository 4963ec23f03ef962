//! Backprop gradients of the tiny architectures against central
//! differences, and the GELU primitive against an independent erf series.

mod common;

use common::*;
use sharpgeo::autodiff::primitive::{gelu, gelu_prime};
use sharpgeo::model::{count_params, one_hot, GradRequest, LossKind, Mode};

fn check(name: &str, spec: &sharpgeo::model::ModelSpec, loss: LossKind, mode: Mode) {
    let model = random_model(spec, 3, 0.4);
    assert!(count_params(&model) <= 5000, "{name} has {} params", count_params(&model));
    let x = random_images(4, spec, 11);
    let t = one_hot(&[0, 1, 2, 1], spec.num_classes);
    let w = model.weights().to_vec();
    let f = |v: &[f64]| model.loss_grads(v, &x, &t, loss, mode, GradRequest::default()).unwrap().loss;
    let g = model.loss_grads(&w, &x, &t, loss, mode, GradRequest { params: true, input: true }).unwrap();
    let fd = central_difference(f, &w, 1e-5);
    let err = rel_l2(g.params.as_ref().unwrap(), &fd);
    assert!(err <= 1e-5, "{name} {loss:?}: parameter gradient rel err {err:e}");

    let gx = g.input.unwrap();
    let fx = |v: &[f64]| {
        let xi = sharpgeo::Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap();
        model.loss_grads(&w, &xi, &t, loss, mode, GradRequest::default()).unwrap().loss
    };
    let fdx = central_difference(fx, x.data(), 1e-5);
    let err = rel_l2(gx.data(), &fdx);
    assert!(err <= 1e-5, "{name} {loss:?}: input gradient rel err {err:e}");
}

#[test]
fn tiny_models_softmax_ce() {
    for (name, spec) in tiny_specs() {
        check(name, &spec, LossKind::SoftmaxCe, Mode::Eval);
    }
}

#[test]
fn tiny_models_sigmoid() {
    for (name, spec) in tiny_specs() {
        check(name, &spec, LossKind::Sigmoid, Mode::Eval);
    }
}

#[test]
fn dropout_mask_is_fixed_per_seed() {
    let (_, mut spec) = tiny_specs().remove(0);
    spec.dropout_rate = 0.2;
    spec.stochastic_depth_rate = 0.1;
    check("vit-dropout", &spec, LossKind::SoftmaxCe, Mode::Train { seed: 5 });
}

/// `erf` by its Maclaurin series, summed until terms vanish.
fn erf_series(z: f64) -> f64 {
    let mut term = z;
    let mut sum = z;
    let mut n = 0.0;
    while term.abs() > 1e-18 {
        n += 1.0;
        term *= -z * z / n;
        sum += term / (2.0 * n + 1.0);
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

#[test]
fn gelu_matches_erf_series() {
    let expect = 0.5 * (1.0 + erf_series(1.0 / 2f64.sqrt()));
    assert!((gelu(1.0) - expect).abs() <= 1e-15, "{} vs {expect}", gelu(1.0));
    assert!((gelu(1.0) - 0.8413447460685429).abs() <= 1e-15);
    for i in -30..=30 {
        let x = 0.1 * i as f64;
        let exact = 0.5 * x * (1.0 + erf_series(x / 2f64.sqrt()));
        assert!((gelu(x) - exact).abs() <= 1e-14, "gelu({x})");
        let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
        assert!((gelu_prime(x) - fd).abs() <= 1e-8, "gelu'({x})");
    }
}
