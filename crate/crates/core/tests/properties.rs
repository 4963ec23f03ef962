//! Property tests for invariants that must hold for every input.

use proptest::prelude::*;
use sharpgeo::adversarial::project_pixel;
use sharpgeo::autodiff::{eval_primitive, hessian_vector_product, FnObjective, Primitive};
use sharpgeo::data::{decode, encode, mixup_pair, Dataset};
use sharpgeo::geometry::{filter_normalize, grid_axis, jacobi_eigen};
use sharpgeo::model::checkpoint;
use sharpgeo::model::argmax;
use sharpgeo::optim::{clip_global_norm, lr_at, sam_perturbation, Decay, TrainConfig};
use sharpgeo::params::{ParameterSet, Role};
use sharpgeo::Tensor;

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `½ vᵀ A v` with `A = diag(a) + u uᵀ`.
fn quadratic(a: Vec<f64>, u: Vec<f64>) -> FnObjective<impl Fn(&[f64]) -> f64, impl Fn(&[f64]) -> Vec<f64>> {
    let n = a.len();
    let mul = move |v: &[f64]| -> Vec<f64> {
        let d: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
        a.iter().zip(v).zip(&u).map(|((ai, vi), ui)| ai * vi + d * ui).collect()
    };
    let m2 = mul.clone();
    FnObjective::new(n, move |v: &[f64]| 0.5 * v.iter().zip(m2(v)).map(|(x, y)| x * y).sum::<f64>(), mul)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hvp_is_linear(
        a in prop::collection::vec(-2.0f64..2.0, 5),
        u in prop::collection::vec(-1.0f64..1.0, 5),
        w in prop::collection::vec(-1.0f64..1.0, 5),
        v1 in prop::collection::vec(-1.0f64..1.0, 5),
        v2 in prop::collection::vec(-1.0f64..1.0, 5),
        s in 0.1f64..3.0,
    ) {
        prop_assume!(l2(&v1) > 1e-3 && l2(&v2) > 1e-3);
        let sum: Vec<f64> = v1.iter().zip(&v2).map(|(x, y)| x + y).collect();
        prop_assume!(l2(&sum) > 1e-3);
        let obj = quadratic(a, u);
        let h = |v: &[f64]| hessian_vector_product(&obj, &w, v, 1e-4).unwrap();
        let scaled: Vec<f64> = v1.iter().map(|x| s * x).collect();
        for (x, y) in h(&scaled).iter().zip(h(&v1)) {
            prop_assert!((x - s * y).abs() <= 1e-6);
        }
        let (h1, h2) = (h(&v1), h(&v2));
        for ((x, y), z) in h(&sum).iter().zip(&h1).zip(&h2) {
            prop_assert!((x - y - z).abs() <= 1e-6);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..7, seed in prop::collection::vec(-50.0f64..50.0, 35)) {
        let data: Vec<f64> = seed.iter().cycle().take(rows * cols).copied().collect();
        let t = Tensor::new(vec![rows, cols], data).unwrap();
        let p = eval_primitive(&Primitive::Softmax, &[&t]).unwrap();
        for row in p.data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn sam_perturbation_has_norm_rho(g in prop::collection::vec(-1e3f64..1e3, 1..40), rho in 1e-4f64..2.0) {
        prop_assume!(l2(&g) > 1e-6);
        let e = sam_perturbation(&g, rho).unwrap();
        prop_assert!((l2(&e) - rho).abs() <= 1e-12 * rho);
        for (ei, gi) in e.iter().zip(&g) {
            prop_assert!(ei * gi >= 0.0);
        }
    }

    #[test]
    fn projection_is_feasible(v in -2.0f64..3.0, x in 0.0f64..=1.0, eps in 0.0f64..0.2) {
        let p = project_pixel(v, x, eps);
        prop_assert!((p - x).abs() <= eps);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn clipping_bounds_norm(g in prop::collection::vec(-1e3f64..1e3, 1..30), max in 1e-3f64..10.0) {
        let mut c = g.clone();
        let before = clip_global_norm(&mut c, max);
        prop_assert!((before - l2(&g)).abs() <= 1e-9 * before.max(1.0));
        prop_assert!(l2(&c) <= max * (1.0 + 1e-12) || c == g);
    }

    #[test]
    fn learning_rate_stays_in_range(step in 0u64..2000, warm in 0u64..100, total in 100u64..1000, cosine in any::<bool>()) {
        let cfg = TrainConfig {
            learning_rate: 0.3,
            warmup_steps: warm,
            total_steps: total,
            decay: if cosine { Decay::Cosine } else { Decay::Linear },
            ..TrainConfig::default()
        };
        let lr = lr_at(step, &cfg);
        prop_assert!((0.0..=0.3).contains(&lr));
    }

    #[test]
    fn checkpoint_round_trip(
        names in prop::collection::vec("[a-z.]{1,12}", 1..5),
        dims in prop::collection::vec(prop::collection::vec(1usize..4, 0..3), 1..5),
        fill in -1e6f64..1e6,
    ) {
        let tensors: Vec<(String, Tensor)> = names.iter().zip(dims.iter().cycle()).enumerate().map(|(i, (n, d))| {
            let len: usize = d.iter().product();
            (n.clone(), Tensor::new(d.clone(), (0..len).map(|k| fill * (k + i) as f64).collect()).unwrap())
        }).collect();
        let bytes = checkpoint::encode(&tensors).unwrap();
        prop_assert_eq!(checkpoint::decode(&bytes).unwrap(), tensors);
    }

    #[test]
    fn dataset_round_trip(bytes in prop::collection::vec(any::<u8>(), 2 * 3 * 2 * 1), labels in prop::collection::vec(0usize..4, 2)) {
        let images = Tensor::new(vec![2, 3, 2, 1], bytes.iter().map(|b| *b as f64 / 255.0).collect()).unwrap();
        let ds = Dataset::new(images, labels, 4, "p").unwrap();
        let enc = encode(&ds).unwrap();
        let back = decode(&enc, "p").unwrap();
        prop_assert_eq!(encode(&back).unwrap(), enc);
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn mixup_stays_in_domain(a in prop::collection::vec(0.0f64..=1.0, 6), b in prop::collection::vec(0.0f64..=1.0, 6), lam in 0.0f64..=1.0, y1 in 0usize..3, y2 in 0usize..3) {
        let (x1, x2) = (Tensor::from_vec(a), Tensor::from_vec(b));
        let (x, y) = mixup_pair(&x1, y1, &x2, y2, lam, 3).unwrap();
        prop_assert!(x.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((y.iter().sum::<f64>() - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn jacobi_reconstructs(n in 1usize..7, vals in prop::collection::vec(-5.0f64..5.0, 49)) {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                a[i * n + j] = vals[i * 7 + j];
                a[j * n + i] = vals[i * 7 + j];
            }
        }
        let e = jacobi_eigen(&a, n).unwrap();
        prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        let scale = 1.0 + a.iter().map(|x| x.abs()).fold(0.0, f64::max);
        for i in 0..n {
            for j in 0..n {
                let r: f64 = (0..n).map(|k| e.values[k] * e.vectors[k][i] * e.vectors[k][j]).sum();
                prop_assert!((r - a[i * n + j]).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn even_symmetric_axis_contains_zero(half in 1usize..40, r in 0.1f64..5.0) {
        let axis = grid_axis(2 * half, (-r, r));
        prop_assert_eq!(axis.len(), 2 * half);
        prop_assert_eq!(axis[half], 0.0);
    }

    #[test]
    fn filter_normalization_matches_norms(w in prop::collection::vec(-1.0f64..1.0, 12), d in prop::collection::vec(-1.0f64..1.0, 12)) {
        let mut params = ParameterSet::new();
        params.push("k", Role::Other, None, Tensor::zeros(&[3, 3])).unwrap();
        params.push("b", Role::Other, None, Tensor::zeros(&[3])).unwrap();
        let mut dir = d.clone();
        filter_normalize(&mut dir, &params, &w).unwrap();
        for f in 0..3 {
            let wn = l2(&[w[f], w[3 + f], w[6 + f]]);
            let dn = l2(&[dir[f], dir[3 + f], dir[6 + f]]);
            prop_assert!((wn - dn).abs() <= 1e-12 || l2(&[d[f], d[3 + f], d[6 + f]]) == 0.0);
        }
        prop_assert!((l2(&w[9..]) - l2(&dir[9..])).abs() <= 1e-12 || l2(&d[9..]) == 0.0);
    }

    #[test]
    fn argmax_picks_first_maximum(v in prop::collection::vec(-3i32..3, 1..10)) {
        let row: Vec<f64> = v.iter().map(|x| *x as f64).collect();
        let i = argmax(&row);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(row[i], m);
        prop_assert!(row[..i].iter().all(|x| *x < m));
    }
}
