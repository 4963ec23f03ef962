//! Attacks against closed-form linear-model answers, exact feasibility on
//! a large batch, and the fused single-backprop gradients.

mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sharpgeo::adversarial::{
    adv_sam_step, evaluate_attacks, fgsm_random_start, fgsm_step, fused_gradients, pgd_attack, AttackConfig,
};
use sharpgeo::data::generate_synthetic;
use sharpgeo::harness::{train_run, RunConfig};
use sharpgeo::model::{build_model, one_hot, GradRequest, LossKind, Mode, Model, ModelObjective, ModelSpec};
use sharpgeo::optim::{base_step, sam_step, OptimizerState, TrainConfig};
use sharpgeo::Tensor;

/// Bias-free linear classifier on 4x4x1 images, two classes.
fn linear_model(seed: u64) -> Model {
    random_model(&ModelSpec::mlp(4, 1, 1, 0, 2), seed, 1.0)
}

/// Weight of pixel `p` for class `c` (row-major `[in, out]`).
fn weight(model: &Model, p: usize, c: usize) -> f64 {
    model.weights()[p * 2 + c]
}

fn dyadic_images(n: usize) -> Tensor {
    let data = (0..n * 16).map(|i| (64 + (i * 37) % 128) as f64 / 256.0).collect();
    Tensor::new(vec![n, 4, 4, 1], data).unwrap()
}

#[test]
fn linear_fgsm_reaches_closed_form_corner() {
    let model = linear_model(1);
    assert_eq!(model.weights().len(), 32);
    let x = dyadic_images(3);
    let labels = [0usize, 1, 0];
    let t = one_hot(&labels, 2);
    let eps = 1.0 / 128.0;
    let adv = fgsm_step(&model, &x, &x, &t, LossKind::SoftmaxCe, 1.25 * eps, eps).unwrap();
    for (n, &y) in labels.iter().enumerate() {
        for p in 0..16 {
            // the worst case lowers the margin z_y − z_other
            let s = (weight(&model, p, 1 - y) - weight(&model, p, y)).signum();
            let i = n * 16 + p;
            assert_eq!(adv.data()[i], x.data()[i] + eps * s, "example {n} pixel {p}");
        }
    }
}

fn batch_loss(model: &Model, x: &Tensor, t: &Tensor) -> f64 {
    model.loss_grads(model.weights(), x, t, LossKind::SoftmaxCe, Mode::Eval, GradRequest::default()).unwrap().loss
}

#[test]
fn linear_pgd_is_at_least_as_strong_as_fgsm() {
    let model = linear_model(2);
    let x = dyadic_images(8);
    let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
    let t = one_hot(&labels, 2);
    let cfg = AttackConfig::default();
    assert!((cfg.epsilon / cfg.pgd_step_size).ceil() <= cfg.pgd_steps as f64);
    let pgd = pgd_attack(&model, &x, &t, LossKind::SoftmaxCe, &cfg, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fgsm = fgsm_random_start(&model, &x, &t, LossKind::SoftmaxCe, &cfg, &mut rng).unwrap();
    assert!(batch_loss(&model, &pgd, &t) >= batch_loss(&model, &fgsm, &t) - 1e-12);
    // PGD lands on the corner (up to the final rounding of the projection)
    for (i, (&a, &c)) in pgd.data().iter().zip(x.data()).enumerate() {
        assert!(((a - c).abs() - cfg.epsilon).abs() <= 4.0 * f64::EPSILON, "pixel {i}");
    }
}

#[test]
fn single_step_pgd_equals_zero_start_fgsm() {
    let model = random_model(&ModelSpec::preset("tiny-vit").unwrap(), 4, 0.3);
    let x = random_images(5, model.spec(), 9);
    let t = one_hot(&[0, 1, 1, 0, 1], 2);
    let cfg = AttackConfig { pgd_steps: 1, pgd_step_size: 4.0 / 255.0, ..Default::default() };
    let pgd = pgd_attack(&model, &x, &t, LossKind::SoftmaxCe, &cfg, None).unwrap();
    let fgsm = fgsm_step(&model, &x, &x, &t, LossKind::SoftmaxCe, cfg.pgd_step_size, cfg.epsilon).unwrap();
    assert_eq!(pgd, fgsm);
}

#[test]
fn feasibility_on_ten_thousand_examples() {
    let spec = ModelSpec::preset("tiny-vit").unwrap();
    let model = random_model(&spec, 5, 0.3);
    let ds = generate_synthetic(7, 10_000, 2, 8);
    let cfg = AttackConfig { epsilon: 8.0 / 255.0, pgd_random_start: true, pgd_steps: 3, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for start in (0..ds.len()).step_by(500) {
        let x = ds.images.index_range(start, start + 500);
        let t = one_hot(&ds.labels[start..start + 500], 2);
        let f = fgsm_random_start(&model, &x, &t, LossKind::SoftmaxCe, &cfg, &mut rng).unwrap();
        let p = pgd_attack(&model, &x, &t, LossKind::SoftmaxCe, &cfg, Some(&mut rng)).unwrap();
        for adv in [&f, &p] {
            for (&a, &c) in adv.data().iter().zip(x.data()) {
                assert!((a - c).abs() <= cfg.epsilon && (0.0..=1.0).contains(&a), "{a} vs {c}");
            }
        }
        checked += 500;
    }
    assert_eq!(checked, 10_000);
}

#[test]
fn zero_epsilon_is_identity() {
    let spec = ModelSpec::preset("tiny-vit").unwrap();
    let model = build_model(&spec, 0).unwrap();
    let ds = generate_synthetic(1, 64, 2, 8);
    let cfg = AttackConfig { epsilon: 0.0, ..Default::default() };
    let r = evaluate_attacks(&model, &ds.images, &ds.labels, LossKind::SoftmaxCe, &cfg, 0).unwrap();
    assert_eq!((r.fgsm_acc, r.pgd_acc), (r.clean_acc, r.clean_acc));
}

#[test]
fn fused_gradients_equal_separate_passes() {
    for (name, spec) in tiny_specs() {
        let model = random_model(&spec, 8, 0.4);
        let x = random_images(3, &spec, 1);
        let t = one_hot(&[2, 0, 1], 3);
        let w = model.weights();
        let (loss, gw, gx) = fused_gradients(&model, w, &x, &t, LossKind::SoftmaxCe, Mode::Eval).unwrap();
        let only_w = model
            .loss_grads(w, &x, &t, LossKind::SoftmaxCe, Mode::Eval, GradRequest { params: true, input: false })
            .unwrap();
        let only_x = model
            .loss_grads(w, &x, &t, LossKind::SoftmaxCe, Mode::Eval, GradRequest { params: false, input: true })
            .unwrap();
        assert!((loss - only_w.loss).abs() <= 1e-12, "{name}");
        let dw = gw.iter().zip(only_w.params.unwrap()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let dx = gx.data().iter().zip(only_x.input.unwrap().data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dw <= 1e-12 && dx <= 1e-12, "{name}: {dw:e} {dx:e}");
    }
}

fn adv_setup() -> (Model, Tensor, Tensor, TrainConfig) {
    let model = random_model(&ModelSpec::preset("tiny-vit").unwrap(), 9, 0.3);
    let x = random_images(6, model.spec(), 2);
    let t = one_hot(&[0, 1, 0, 1, 1, 0], 2);
    (model, x, t, TrainConfig { learning_rate: 0.05, ..Default::default() })
}

#[test]
fn adv_sam_reductions() {
    let (model, x, t, train) = adv_setup();
    let dim = model.weights().len();
    let run_adv = |rho: f64, eps: f64| {
        let mut m = model.clone();
        let mut st = OptimizerState::new(dim);
        let cfg = TrainConfig { sam_rho: rho, ..train.clone() };
        let attack = AttackConfig { epsilon: eps, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        adv_sam_step(&mut m, &x, &t, &cfg, &attack, &mut st, Mode::Eval, &mut rng).unwrap();
        m.weights().to_vec()
    };

    // both zero: a plain base step
    let mut w = model.weights().to_vec();
    let g = ModelObjective::with_targets(&model, &x, t.clone(), LossKind::SoftmaxCe, Mode::Eval);
    let grad = sharpgeo::autodiff::Objective::grad(&g, &w).unwrap();
    base_step(&mut w, grad, &train, &mut OptimizerState::new(dim)).unwrap();
    assert_eq!(run_adv(0.0, 0.0), w);

    // no input perturbation: a SAM step
    let mut w = model.weights().to_vec();
    let cfg = TrainConfig { sam_rho: 0.05, ..train.clone() };
    sam_step(&g, &mut w, &cfg, &mut OptimizerState::new(dim)).unwrap();
    assert_eq!(run_adv(0.05, 0.0), w);

    // no weight perturbation: FGSM adversarial training
    let eps = 4.0 / 255.0;
    let attack = AttackConfig { epsilon: eps, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x_adv = fgsm_random_start(&model, &x, &t, LossKind::SoftmaxCe, &attack, &mut rng).unwrap();
    let ga = ModelObjective::with_targets(&model, &x_adv, t.clone(), LossKind::SoftmaxCe, Mode::Eval);
    let mut w = model.weights().to_vec();
    let grad = sharpgeo::autodiff::Objective::grad(&ga, &w).unwrap();
    base_step(&mut w, grad, &train, &mut OptimizerState::new(dim)).unwrap();
    assert_eq!(run_adv(0.0, eps), w);
}

#[test]
fn trained_model_attack_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.train.total_steps = 300;
    cfg.train.learning_rate = 0.01;
    cfg.data.synthetic.train_count = 512;
    cfg.data.synthetic.eval_count = 256;
    let out = train_run(&cfg, dir.path(), None).unwrap();
    let (_, eval) = cfg.load_data().unwrap();
    let attack = AttackConfig { epsilon: 8.0 / 255.0, pgd_step_size: 2.0 / 255.0, ..Default::default() };
    let r = evaluate_attacks(&out.model, &eval.images, &eval.labels, LossKind::SoftmaxCe, &attack, 0).unwrap();
    assert!(r.clean_acc > 0.6, "{r:?}");
    assert!(r.pgd_acc <= r.fgsm_acc && r.fgsm_acc <= r.clean_acc, "{r:?}");
}
