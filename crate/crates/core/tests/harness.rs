//! End-to-end runs through the harness: accuracy on synthetic data,
//! diagnose against the dense Hessian oracle, sweeps, artifact schemas and
//! determinism.

use std::path::Path;

use sharpgeo::geometry::{mlp_hessian_dense, GeometryReport};
use sharpgeo::harness::{
    cmd_diagnose, cmd_landscape, cmd_sweep, evaluation_subset, load_checkpoint, read_metrics, train_run, ModelChoice,
    RunConfig, SweepConfig, SweepParam, SweepTable,
};
use sharpgeo::model::{one_hot, ModelSpec};
use sharpgeo::optim::BaseOptimizer;
use sharpgeo::Error;

fn small(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.train.total_steps = 80;
    cfg.train.batch_size = 16;
    cfg.train.learning_rate = 0.01;
    cfg.eval_interval = 20;
    cfg.data.synthetic.train_count = 480;
    cfg.data.synthetic.eval_count = 64;
    cfg.diagnose.power_iters = 10;
    cfg.diagnose.flatness_samples = 20;
    cfg.diagnose.missing_pairs = 50;
    cfg.landscape.n = 6;
    cfg.out_dir = out.to_path_buf();
    cfg
}

#[test]
fn tiny_vit_learns_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.train.total_steps = 2000;
    cfg.train.batch_size = 32;
    cfg.train.learning_rate = 3e-3;
    cfg.train.warmup_steps = 100;
    cfg.eval_interval = 500;
    cfg.data.synthetic.train_count = 2048;
    cfg.data.synthetic.eval_count = 512;
    let out = train_run(&cfg, dir.path(), None).unwrap();
    let last = out.records.last().unwrap();
    assert_eq!(last.step, 2000);
    assert!(last.eval_accuracy > 0.9, "{last:?}");
}

#[test]
fn diagnose_lambda_matches_dense_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.model = ModelChoice::Spec(ModelSpec::mlp(4, 3, 8, 1, 2));
    cfg.data.synthetic.size = 4;
    cfg.train.total_steps = 200;
    cfg.train.learning_rate = 0.05;
    cfg.diagnose.power_iters = 100;
    train_run(&cfg, dir.path(), None).unwrap();
    let (report, _) = cmd_diagnose(&cfg, None).unwrap();

    let (model, _) = load_checkpoint(&dir.path().join("checkpoint.sgeo"), &cfg.spec().unwrap()).unwrap();
    let (train, _) = cfg.load_data().unwrap();
    let sub = evaluation_subset(&train, cfg.data.subset_fraction, cfg.data.subset_seed);
    let h = mlp_hessian_dense(&model, &sub.images, &one_hot(&sub.labels, 2), cfg.train.loss).unwrap();
    let eig = h.eigen().unwrap();
    let dominant = eig.values.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
    let rel = (report.lambda_max - dominant).abs() / dominant.abs();
    assert!(rel <= 1e-3, "power {} vs dense {dominant} (rel {rel:e})", report.lambda_max);
}

#[test]
fn weight_decay_sweep_shrinks_norm_on_convex_problem() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    // softmax regression on raw pixels: a convex objective
    cfg.model = ModelChoice::Spec(ModelSpec::mlp(4, 3, 1, 0, 2));
    cfg.data.synthetic.size = 4;
    cfg.train.optimizer = BaseOptimizer::Sgd;
    cfg.train.momentum = 0.0;
    cfg.train.learning_rate = 0.5;
    cfg.train.total_steps = 400;
    cfg.eval_interval = 400;
    cfg.sweep = Some(SweepConfig { parameter: SweepParam::WeightDecay, values: vec![0.1, 0.0, 0.03, 0.01] });
    let table = cmd_sweep(&cfg).unwrap();
    let values: Vec<f64> = table.rows.iter().map(|r| r.value).collect();
    assert_eq!(values, vec![0.0, 0.01, 0.03, 0.1]);
    for pair in table.rows.windows(2) {
        assert!(pair[1].weight_norm < pair[0].weight_norm, "{:?}", table.rows);
    }
    let reread: SweepTable = serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(reread, table);
}

#[test]
fn sweep_keeps_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.train.total_steps = 20;
    // a huge SGD step diverges; the other run still lands in the table
    cfg.train.optimizer = BaseOptimizer::Sgd;
    cfg.train.warmup_steps = 0;
    cfg.sweep = Some(SweepConfig { parameter: SweepParam::LearningRate, values: vec![1e200, 0.01] });
    let err = cmd_sweep(&cfg).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    let table: SweepTable = serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].value, 0.01);
    assert_eq!(table.failures.len(), 1);
}

fn run_all(out: &Path, tweak: impl Fn(&mut RunConfig)) -> Vec<Vec<u8>> {
    let mut cfg = small(out);
    tweak(&mut cfg);
    train_run(&cfg, out, None).unwrap();
    cmd_diagnose(&cfg, None).unwrap();
    cmd_landscape(&cfg, None).unwrap();
    ["metrics.jsonl", "checkpoint.sgeo", "report.json", "landscape.csv", "landscape.json"]
        .iter()
        .map(|f| std::fs::read(out.join(f)).unwrap())
        .collect()
}

#[test]
fn full_runs_are_byte_identical() {
    let tweaks: Vec<Box<dyn Fn(&mut RunConfig)>> = vec![
        Box::new(|_| {}),
        Box::new(|c| c.train.sam_rho = 0.05),
        Box::new(|c| {
            c.train.sam_rho = 0.05;
            c.train.shards = 2;
            c.data.augment = true;
        }),
        Box::new(|c| {
            c.attack.adversarial_training = true;
            c.train.sam_rho = 0.05;
        }),
    ];
    for (i, t) in tweaks.iter().enumerate() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        assert_eq!(run_all(a.path(), t), run_all(b.path(), t), "variant {i}");
    }
}

#[test]
fn artifacts_reread_against_their_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let out = train_run(&cfg, dir.path(), None).unwrap();
    let metrics = read_metrics(&out.metrics).unwrap();
    assert_eq!(metrics, out.records);
    assert_eq!(metrics.iter().map(|m| m.step).collect::<Vec<_>>(), vec![20, 40, 60, 80]);
    let (model, opt) = load_checkpoint(&out.checkpoint, &cfg.spec().unwrap()).unwrap();
    assert_eq!(model.weights(), out.model.weights());
    assert_eq!(opt, out.optimizer);
    let (report, path) = cmd_diagnose(&cfg, None).unwrap();
    let reread: GeometryReport = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(reread, report);
    let (grid, _) = cmd_landscape(&cfg, None).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("landscape.csv")).unwrap();
    let cells: Vec<f64> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(cells, grid.loss);

    // a log whose steps go backwards is rejected
    let bad = dir.path().join("bad.jsonl");
    let lines: Vec<&str> = std::fs::read_to_string(&out.metrics).unwrap().leak().lines().rev().collect();
    std::fs::write(&bad, lines.join("\n")).unwrap();
    assert!(matches!(read_metrics(&bad), Err(Error::Validation(_))));
}

#[test]
fn resume_continues_numbering() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.train.total_steps = 40;
    train_run(&cfg, dir.path(), None).unwrap();
    cfg.train.total_steps = 80;
    let ckpt = dir.path().join("checkpoint.sgeo");
    let resumed = train_run(&cfg, dir.path(), Some(&ckpt)).unwrap();
    assert_eq!(resumed.records.iter().map(|m| m.step).collect::<Vec<_>>(), vec![60, 80]);
    let all = read_metrics(&dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(all.iter().map(|m| m.step).collect::<Vec<_>>(), vec![20, 40, 60, 80]);
}

#[test]
fn spec_mismatch_lists_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    train_run(&cfg, dir.path(), None).unwrap();
    let mut other = ModelSpec::preset("tiny-vit").unwrap();
    other.mlp_dim = 16;
    other.num_heads = 4;
    match load_checkpoint(&dir.path().join("checkpoint.sgeo"), &other) {
        Err(Error::SpecMismatch(fields)) => {
            assert!(fields.iter().any(|f| f == "mlp_dim"), "{fields:?}");
            assert!(fields.iter().any(|f| f == "num_heads"), "{fields:?}");
        }
        other => panic!("expected a spec mismatch, got {:?}", other.map(|_| ())),
    }
}
