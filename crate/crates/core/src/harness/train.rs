//! The training loop, checkpoints and metrics logs.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversarial::adv_sam_step;
use crate::data::{example_rng, inception_preprocess, Dataset};
use crate::error::{Error, Result};
use crate::geometry::activity::EVAL_CHUNK;
use crate::geometry::report::real;
use crate::harness::config::RunConfig;
use crate::model::checkpoint::{read_checkpoint, write_checkpoint};
use crate::model::{build_model, one_hot, Mode, Model, ModelObjective, ModelSpec};
use crate::optim::{lr_at, sam_step, sam_step_sharded, OptimizerState, StepOutcome};
use crate::tensor::Tensor;

/// Consecutive non-finite steps after which a run is declared divergent.
pub const MAX_NONFINITE_STEPS: usize = 10;

const OPT_STEP: &str = "optimizer.step";
const OPT_M: &str = "optimizer.m";
const OPT_V: &str = "optimizer.v";

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    /// Completed optimizer steps.
    pub step: u64,
    /// Mean training loss over the steps since the previous record.
    #[serde(with = "real")]
    pub train_loss: f64,
    pub eval_accuracy: f64,
    pub learning_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
}

/// Read a metrics log, checking that steps strictly increase.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut out: Vec<MetricsRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let r: MetricsRecord = serde_json::from_str(line)
            .map_err(|e| Error::Validation(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if let Some(prev) = out.last() {
            if r.step <= prev.step {
                return Err(Error::Validation(format!(
                    "{} line {}: step {} does not increase past {}",
                    path.display(),
                    i + 1,
                    r.step,
                    prev.step
                )));
            }
        }
        out.push(r);
    }
    Ok(out)
}

/// Sidecar stored next to each checkpoint (`<checkpoint>.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub spec: ModelSpec,
    pub step: u64,
    pub seed: u64,
}

pub fn meta_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

pub fn save_checkpoint(path: &Path, model: &Model, opt: &OptimizerState, seed: u64) -> Result<()> {
    let params = model.params();
    let mut tensors: Vec<(String, Tensor)> =
        params.infos().iter().enumerate().map(|(i, info)| (info.name.clone(), params.tensor(i))).collect();
    tensors.push((OPT_STEP.into(), Tensor::scalar(opt.step as f64)));
    tensors.push((OPT_M.into(), Tensor::from_vec(opt.m.clone())));
    tensors.push((OPT_V.into(), Tensor::from_vec(opt.v.clone())));
    write_checkpoint(path, &tensors)?;
    let meta = CheckpointMeta { spec: model.spec().clone(), step: opt.step, seed };
    std::fs::write(meta_path(path), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

/// Field names whose values differ between two specs.
pub fn spec_differences(a: &ModelSpec, b: &ModelSpec) -> Vec<String> {
    let (Ok(serde_json::Value::Object(x)), Ok(serde_json::Value::Object(y))) =
        (serde_json::to_value(a), serde_json::to_value(b))
    else {
        return vec!["spec".into()];
    };
    x.iter().filter(|(k, v)| y.get(*k) != Some(*v)).map(|(k, _)| k.clone()).collect()
}

/// Load a checkpoint for `spec`. Any disagreement (sidecar spec fields,
/// missing or extra tensors, shapes) is reported as one `SpecMismatch`.
pub fn load_checkpoint(path: &Path, spec: &ModelSpec) -> Result<(Model, OptimizerState)> {
    let mut diffs = Vec::new();
    let meta = meta_path(path);
    if meta.is_file() {
        let m: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(&meta)?)
            .map_err(|e| Error::Validation(format!("{}: {e}", meta.display())))?;
        diffs.extend(spec_differences(&m.spec, spec));
    }
    let tensors = read_checkpoint(path)?;
    let mut model = build_model(spec, 0)?;
    let mut by_name: BTreeMap<&str, &Tensor> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    let mut flat = Vec::with_capacity(model.params().len());
    for info in model.params().infos() {
        match by_name.remove(info.name.as_str()) {
            Some(t) if t.shape() == info.shape.as_slice() => flat.extend_from_slice(t.data()),
            Some(t) => diffs.push(format!("{}: shape {:?} vs {:?}", info.name, t.shape(), info.shape)),
            None => diffs.push(format!("{}: missing", info.name)),
        }
    }
    let dim = model.params().len();
    let mut opt = OptimizerState::new(dim);
    if let Some(s) = by_name.remove(OPT_STEP) {
        opt.step = s.item() as u64;
    }
    for (key, buf) in [(OPT_M, &mut opt.m), (OPT_V, &mut opt.v)] {
        if let Some(t) = by_name.remove(key) {
            if t.len() == dim {
                buf.copy_from_slice(t.data());
            } else {
                diffs.push(format!("{key}: length {} vs {dim}", t.len()));
            }
        }
    }
    diffs.extend(by_name.keys().map(|k| format!("{k}: unexpected")));
    if !diffs.is_empty() {
        return Err(Error::SpecMismatch(diffs));
    }
    model.set_weights(&flat)?;
    Ok((model, opt))
}

/// Fraction of correctly classified examples, evaluated in chunks.
pub fn accuracy(model: &Model, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Ok(f64::NAN);
    }
    let mut hits = 0;
    for start in (0..ds.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(ds.len());
        let pred = model.predict(&ds.images.index_range(start, end))?;
        hits += pred.iter().zip(&ds.labels[start..end]).filter(|(p, y)| p == y).count();
    }
    Ok(hits as f64 / ds.len() as f64)
}

/// Example order: one seeded permutation per epoch, so the batch at any step
/// is a pure function of `(seed, step)` and resumed runs see the same data.
struct BatchSampler {
    n: usize,
    batch: usize,
    seed: u64,
    cached: Option<(u64, Vec<usize>)>,
}

impl BatchSampler {
    fn indices(&mut self, step: u64) -> Vec<usize> {
        let start = step * self.batch as u64;
        (0..self.batch as u64)
            .map(|k| {
                let p = start + k;
                let epoch = p / self.n as u64;
                if self.cached.as_ref().map(|c| c.0) != Some(epoch) {
                    let mut perm: Vec<usize> = (0..self.n).collect();
                    perm.shuffle(&mut example_rng(self.seed, epoch, u64::MAX));
                    self.cached = Some((epoch, perm));
                }
                self.cached.as_ref().expect("cached").1[(p % self.n as u64) as usize]
            })
            .collect()
    }
}

fn batch_images(ds: &Dataset, idx: &[usize], augment: bool, seed: u64, step: u64) -> Result<Tensor> {
    let images = ds.images.gather(idx);
    if !augment {
        return Ok(images);
    }
    let (h, w, _) = ds.image_shape();
    let out: Result<Vec<Tensor>> = (0..idx.len())
        .into_par_iter()
        .map(|k| inception_preprocess(&images.index_leading(k), (h, w), &mut example_rng(seed, step, k as u64), true))
        .collect();
    Tensor::stack(&out?)
}

fn train_step(
    cfg: &RunConfig,
    model: &mut Model,
    opt: &mut OptimizerState,
    x: &Tensor,
    targets: Tensor,
    step: u64,
) -> Result<StepOutcome> {
    let seed = cfg.train.seed;
    let mode = Mode::Train { seed: example_rng(seed, step, u64::MAX - 1).next_u64() };
    if cfg.attack.adversarial_training {
        let mut rng = example_rng(seed, step, u64::MAX - 2);
        return adv_sam_step(model, x, &targets, &cfg.train, &cfg.attack, opt, mode, &mut rng);
    }
    let mut w = model.weights().to_vec();
    let outcome = {
        let m: &Model = model;
        let shards = cfg.train.shards;
        if shards == 1 {
            sam_step(&ModelObjective::with_targets(m, x, targets, cfg.train.loss, mode), &mut w, &cfg.train, opt)?
        } else {
            let b = x.shape()[0];
            let bounds: Vec<(usize, usize)> = (0..shards).map(|s| (s * b / shards, (s + 1) * b / shards)).collect();
            let xs: Vec<Tensor> = bounds.iter().map(|&(s, e)| x.index_range(s, e)).collect();
            let objs: Vec<ModelObjective> = bounds
                .iter()
                .zip(&xs)
                .map(|(&(s, e), xi)| {
                    ModelObjective::with_targets(m, xi, targets.index_range(s, e), cfg.train.loss, mode)
                })
                .collect();
            sam_step_sharded(&objs, &mut w, &cfg.train, opt)?
        }
    };
    model.set_weights(&w)?;
    Ok(outcome)
}

/// Result of a training run.
pub struct TrainOutcome {
    pub model: Model,
    pub optimizer: OptimizerState,
    pub records: Vec<MetricsRecord>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// Train per `cfg`, writing `checkpoint.sgeo` (plus sidecar) and
/// `metrics.jsonl` into `out_dir`. With `resume`, weights and optimizer
/// state come from that checkpoint, step numbering continues from it and
/// records are appended to the existing log.
pub fn train_run(cfg: &RunConfig, out_dir: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    let spec = cfg.spec()?;
    let (train, eval) = cfg.load_data()?;
    if train.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let seed = cfg.train.seed;
    let (mut model, mut opt) = match resume {
        Some(p) => load_checkpoint(p, &spec)?,
        None => {
            let m = build_model(&spec, seed)?;
            let d = m.params().len();
            (m, OptimizerState::new(d))
        }
    };
    std::fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join("metrics.jsonl");
    let mut log: File = if resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&metrics_path)?
    } else {
        File::create(&metrics_path)?
    };
    let mut sampler = BatchSampler { n: train.len(), batch: cfg.train.batch_size, seed, cached: None };
    let clock = Instant::now();
    let classes = spec.num_classes;
    let mut records = Vec::new();
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);
    let mut nonfinite = 0usize;
    let mut last_norm = None;
    let mut step = opt.step;
    while step < cfg.train.total_steps {
        let idx = sampler.indices(step);
        let x = batch_images(&train, &idx, cfg.data.augment, seed, step)?;
        let y: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
        let lr = lr_at(opt.step, &cfg.train);
        match train_step(cfg, &mut model, &mut opt, &x, one_hot(&y, classes), step) {
            Ok(o) => {
                nonfinite = 0;
                loss_sum += o.loss;
                loss_count += 1;
                last_norm = Some(o.grad_norm);
            }
            Err(Error::NonFinite(msg)) => {
                nonfinite += 1;
                if nonfinite >= MAX_NONFINITE_STEPS {
                    return Err(Error::NonFinite(format!(
                        "{MAX_NONFINITE_STEPS} consecutive non-finite steps ending at step {}: {msg}",
                        step + 1
                    )));
                }
            }
            Err(e) => return Err(e),
        }
        step += 1;
        if step % cfg.eval_interval == 0 || step == cfg.train.total_steps {
            let r = MetricsRecord {
                step,
                train_loss: if loss_count > 0 { loss_sum / loss_count as f64 } else { f64::NAN },
                eval_accuracy: accuracy(&model, &eval)?,
                learning_rate: lr,
                wall_time: cfg.log_wall_time.then(|| clock.elapsed().as_secs_f64()),
                grad_norm: last_norm,
            };
            writeln!(log, "{}", serde_json::to_string(&r)?)?;
            records.push(r);
            (loss_sum, loss_count) = (0.0, 0);
        }
    }
    log.flush()?;
    // The optimizer counter only advances on applied updates; keep it in
    // step with the loop so resumed runs number their records correctly.
    opt.step = step;
    let checkpoint = out_dir.join("checkpoint.sgeo");
    save_checkpoint(&checkpoint, &model, &opt, seed)?;
    Ok(TrainOutcome { model, optimizer: opt, records, checkpoint, metrics: metrics_path })
}
