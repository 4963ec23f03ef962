//! The five CLI commands. Each writes its artifacts into the output
//! directory and returns what it wrote.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversarial::{evaluate_attacks, AttackReport};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geometry::flatness::FlatnessOptions;
use crate::geometry::report::real;
use crate::geometry::{
    avg_flatness, geometry_report, lambda_max_power, landscape_grid, GeometryReport, LandscapeGrid, LandscapeOptions,
};
use crate::harness::config::{RunConfig, SweepParam};
use crate::harness::train::{accuracy, load_checkpoint, train_run, TrainOutcome};
use crate::model::{build_model, Model, ModelObjective};
use crate::tensor::l2_norm;

pub const CHECKPOINT_FILE: &str = "checkpoint.sgeo";
pub const REPORT_FILE: &str = "report.json";
pub const LANDSCAPE_FILE: &str = "landscape.csv";
pub const LANDSCAPE_META_FILE: &str = "landscape.json";
pub const ATTACK_FILE: &str = "attack.json";
pub const SWEEP_FILE: &str = "sweep.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// The seeded evaluation subset shared by `diagnose` and `landscape`:
/// `ceil(fraction · n)` distinct examples, kept in dataset order.
pub fn evaluation_subset(ds: &Dataset, fraction: f64, seed: u64) -> Dataset {
    let n = ds.len();
    let k = ((n as f64 * fraction).ceil() as usize).clamp(n.min(1), n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    ds.subset(&idx, &format!("{}-subset", ds.split))
}

fn checkpoint_or_default(cfg: &RunConfig, checkpoint: Option<&Path>) -> PathBuf {
    checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT_FILE))
}

fn trained_model(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Model> {
    Ok(load_checkpoint(&checkpoint_or_default(cfg, checkpoint), &cfg.spec()?)?.0)
}

pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    train_run(cfg, &cfg.out_dir, resume)
}

/// Full geometry report on the evaluation subset of the training split;
/// the NTK is measured on a fresh initialization with the run seed.
pub fn cmd_diagnose(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(GeometryReport, PathBuf)> {
    let model = trained_model(cfg, checkpoint)?;
    let (train, _) = cfg.load_data()?;
    let sub = evaluation_subset(&train, cfg.data.subset_fraction, cfg.data.subset_seed);
    let init = build_model(model.spec(), cfg.train.seed)?;
    let report =
        geometry_report(&model, &init, &sub.images, &sub.labels, cfg.train.loss, &cfg.diagnose, cfg.train.seed)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join(REPORT_FILE);
    write_json(&path, &report)?;
    Ok((report, path))
}

/// Everything needed to regenerate a landscape grid bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeMeta {
    pub direction_seeds: [u64; 2],
    pub subset_seed: u64,
    pub subset_fraction: f64,
    pub subset_size: usize,
    pub n: usize,
    pub range: (f64, f64),
    pub filter_normalized: bool,
    #[serde(with = "real")]
    pub center_loss: f64,
}

pub fn cmd_landscape(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(LandscapeGrid, LandscapeMeta)> {
    let model = trained_model(cfg, checkpoint)?;
    let (train, _) = cfg.load_data()?;
    let sub = evaluation_subset(&train, cfg.data.subset_fraction, cfg.data.subset_seed);
    let obj = ModelObjective::new(&model, &sub.images, &sub.labels, cfg.train.loss);
    let l = &cfg.landscape;
    let opts = LandscapeOptions { n: l.n, range: l.range, seed: l.seed };
    let grid = landscape_grid(&obj, model.params(), model.weights(), &opts)?;
    let zero = grid.alphas.iter().position(|a| *a == 0.0);
    let center_loss = match zero {
        Some(i) if grid.betas[i] == 0.0 => grid.at(i, i),
        _ => f64::NAN,
    };
    let meta = LandscapeMeta {
        direction_seeds: [l.seed, l.seed.wrapping_add(1)],
        subset_seed: cfg.data.subset_seed,
        subset_fraction: cfg.data.subset_fraction,
        subset_size: sub.len(),
        n: l.n,
        range: l.range,
        filter_normalized: true,
        center_loss,
    };
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(cfg.out_dir.join(LANDSCAPE_FILE))?);
    grid.write_csv(&mut f)?;
    std::io::Write::flush(&mut f)?;
    write_json(&cfg.out_dir.join(LANDSCAPE_META_FILE), &meta)?;
    Ok((grid, meta))
}

/// Clean, FGSM and PGD accuracy on the evaluation split.
pub fn cmd_attack(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<AttackReport> {
    let model = trained_model(cfg, checkpoint)?;
    let (_, eval) = cfg.load_data()?;
    let report = evaluate_attacks(&model, &eval.images, &eval.labels, cfg.train.loss, &cfg.attack, cfg.train.seed)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join(ATTACK_FILE), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    pub value: f64,
    pub final_accuracy: f64,
    #[serde(with = "real")]
    pub lambda_max: f64,
    pub weight_norm: f64,
    #[serde(with = "real")]
    pub avg_flatness: f64,
    pub run_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFailure {
    pub value: f64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepTable {
    pub parameter: SweepParam,
    /// Successful runs, ascending by swept value.
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

fn sweep_one(cfg: &RunConfig, param: SweepParam, value: f64, index: usize) -> Result<SweepRow> {
    let mut run = cfg.clone();
    param.apply(&mut run.train, value);
    run.train.validate()?;
    let dir = cfg.out_dir.join("sweep").join(format!("{}-{index:03}", param.as_str()));
    let out = train_run(&run, &dir, None)?;
    let (train, eval) = run.load_data()?;
    let sub = evaluation_subset(&train, run.data.subset_fraction, run.data.subset_seed);
    let obj = ModelObjective::new(&out.model, &sub.images, &sub.labels, run.train.loss);
    let w = out.model.weights();
    let d = &run.diagnose;
    let lambda = lambda_max_power(&obj, w, None, d.power_iters, run.train.seed, d.fd_step)?.eigenvalue;
    let flat = avg_flatness(
        &obj,
        out.model.params(),
        w,
        &FlatnessOptions { samples: d.flatness_samples, scale: d.flatness_scale, seed: run.train.seed, ..Default::default() },
    )?;
    Ok(SweepRow {
        value,
        final_accuracy: accuracy(&out.model, &eval)?,
        lambda_max: lambda,
        weight_norm: l2_norm(w),
        avg_flatness: flat.mean,
        run_dir: dir,
    })
}

/// One independent run per value (in parallel, same seeds), sorted by
/// value. The table is written even when runs fail; the first failure is
/// then returned.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepTable> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("sweep command needs a `sweep` section".into()))?;
    let mut values = sweep.values.clone();
    values.sort_by(f64::total_cmp);
    let results: Vec<Result<SweepRow>> =
        values.par_iter().enumerate().map(|(i, &v)| sweep_one(cfg, sweep.parameter, v, i)).collect();
    let mut table = SweepTable { parameter: sweep.parameter, rows: Vec::new(), failures: Vec::new() };
    let mut first_err = None;
    for (v, r) in values.iter().zip(results) {
        match r {
            Ok(row) => table.rows.push(row),
            Err(e) => {
                table.failures.push(SweepFailure { value: *v, error: e.to_string() });
                first_err.get_or_insert(e);
            }
        }
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join(SWEEP_FILE), &table)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(table),
    }
}
