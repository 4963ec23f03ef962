//! Run configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::AttackConfig;
use crate::data::{generate_synthetic, load_binary_dataset, Dataset};
use crate::error::{Error, Result};
use crate::geometry::landscape::DEFAULT_GRID;
use crate::geometry::DiagnoseOptions;
use crate::model::ModelSpec;
use crate::optim::TrainConfig;

/// A named preset or a full architecture description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    Preset(String),
    Spec(ModelSpec),
}

impl ModelChoice {
    pub fn resolve(&self) -> Result<ModelSpec> {
        match self {
            ModelChoice::Preset(name) => {
                ModelSpec::preset(name).ok_or_else(|| Error::InvalidConfig(format!("unknown model preset {name:?}")))
            }
            ModelChoice::Spec(s) => Ok(s.clone()),
        }
    }
}

impl Default for ModelChoice {
    fn default() -> Self {
        ModelChoice::Preset("tiny-vit".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub train_count: usize,
    pub eval_count: usize,
    pub classes: usize,
    pub size: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { seed: 0, train_count: 1024, eval_count: 256, classes: 2, size: 8 }
    }
}

/// Where the examples come from. Binary dataset paths take precedence over
/// the synthetic generator; relative paths are resolved against the
/// directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_path: Option<PathBuf>,
    pub eval_path: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    /// Random-crop and flip augmentation of training batches.
    pub augment: bool,
    /// Fraction of the training set used by `diagnose` and `landscape`.
    pub subset_fraction: f64,
    pub subset_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_path: None,
            eval_path: None,
            synthetic: SyntheticConfig::default(),
            augment: false,
            subset_fraction: 0.1,
            subset_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeConfig {
    pub n: usize,
    pub range: (f64, f64),
    pub seed: u64,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self { n: DEFAULT_GRID, range: (-1.0, 1.0), seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    SamRho,
    WeightDecay,
    LearningRate,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::SamRho => "sam_rho",
            SweepParam::WeightDecay => "weight_decay",
            SweepParam::LearningRate => "learning_rate",
        }
    }

    pub fn apply(self, train: &mut TrainConfig, value: f64) {
        match self {
            SweepParam::SamRho => train.sam_rho = value,
            SweepParam::WeightDecay => train.weight_decay = value,
            SweepParam::LearningRate => train.learning_rate = value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
}

/// Everything one CLI invocation needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelChoice,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub diagnose: DiagnoseOptions,
    pub data: DataConfig,
    pub landscape: LandscapeConfig,
    pub sweep: Option<SweepConfig>,
    /// Steps between metrics records (the final step is always recorded).
    pub eval_interval: u64,
    /// Cap on evaluation examples; `None` uses the whole eval split.
    pub eval_examples: Option<usize>,
    /// Add elapsed seconds to metrics records (breaks byte-identical reruns).
    pub log_wall_time: bool,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelChoice::default(),
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
            diagnose: DiagnoseOptions::default(),
            data: DataConfig::default(),
            landscape: LandscapeConfig::default(),
            sweep: None,
            eval_interval: 100,
            eval_examples: None,
            log_wall_time: false,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    /// Parse and validate a JSON config file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.train_path, &mut cfg.data.eval_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        self.model.resolve()
    }

    /// Every violation, joined into one config error.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut push = |r: Result<()>| {
            if let Err(e) = r {
                errs.push(e.to_string());
            }
        };
        push(self.spec().and_then(|s| s.validate()));
        push(self.train.validate());
        push(self.attack.validate());
        let mut own = Vec::new();
        if self.eval_interval == 0 {
            own.push("eval_interval must be >= 1".to_string());
        }
        let d = &self.data;
        if !(d.subset_fraction > 0.0 && d.subset_fraction <= 1.0) {
            own.push(format!("data.subset_fraction must be in (0, 1], got {}", d.subset_fraction));
        }
        for p in [&d.train_path, &d.eval_path].into_iter().flatten() {
            if !p.is_file() {
                own.push(format!("dataset file {} does not exist", p.display()));
            }
        }
        if d.train_path.is_none() {
            if d.synthetic.classes < 2 {
                own.push("data.synthetic.classes must be >= 2".into());
            }
            if d.synthetic.train_count == 0 {
                own.push("data.synthetic.train_count must be >= 1".into());
            }
        }
        if self.landscape.n == 0 || !(self.landscape.range.0 < self.landscape.range.1) {
            own.push("landscape needs n >= 1 and range.0 < range.1".into());
        }
        if self.diagnose.power_iters == 0 || self.diagnose.ntk_block == 0 {
            own.push("diagnose.power_iters and diagnose.ntk_block must be >= 1".into());
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() || s.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                own.push("sweep.values must be a non-empty list of finite values >= 0".into());
            }
        }
        errs.extend(own);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs.join("; ")))
        }
    }

    /// Training and evaluation splits.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let d = &self.data;
        let s = &d.synthetic;
        let train = match &d.train_path {
            Some(p) => load_binary_dataset(p)?,
            None => with_split(generate_synthetic(s.seed, s.train_count, s.classes, s.size), "train"),
        };
        let eval = match &d.eval_path {
            Some(p) => load_binary_dataset(p)?,
            None if d.train_path.is_none() => {
                with_split(generate_synthetic(s.seed.wrapping_add(1), s.eval_count, s.classes, s.size), "eval")
            }
            None => train.clone(),
        };
        let spec = self.spec()?;
        for ds in [&train, &eval] {
            let (h, w, c) = ds.image_shape();
            let wanted = (spec.image_height, spec.image_width, spec.channels);
            if !ds.is_empty() && (h, w, c) != wanted {
                return Err(Error::InvalidConfig(format!(
                    "{} images are {h}x{w}x{c}, model expects {}x{}x{}",
                    ds.split, wanted.0, wanted.1, wanted.2
                )));
            }
            if ds.classes > spec.num_classes {
                return Err(Error::InvalidConfig(format!(
                    "{} has {} classes, model has {}",
                    ds.split, ds.classes, spec.num_classes
                )));
            }
        }
        let eval = match self.eval_examples {
            Some(n) => eval.take(n),
            None => eval,
        };
        Ok((train, eval))
    }
}

fn with_split(mut ds: Dataset, split: &str) -> Dataset {
    ds.split = split.to_string();
    ds
}
