use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LossKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseOptimizer {
    Sgd,
    Adamw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    Cosine,
    Linear,
}

/// Optimizer and schedule settings. Loaded from JSON with snake_case keys;
/// unknown keys are rejected and missing keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: BaseOptimizer,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Decoupled weight decay `λ`.
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub decay: Decay,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub batch_size: usize,
    pub loss: LossKind,
    /// SAM radius `ρ`; 0 selects plain base-optimizer training.
    pub sam_rho: f64,
    /// Number of data shards; each computes its own SAM perturbation.
    pub shards: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: BaseOptimizer::Adamw,
            learning_rate: 3e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            warmup_steps: 0,
            total_steps: 1000,
            decay: Decay::Cosine,
            clip_norm: None,
            batch_size: 32,
            loss: LossKind::SoftmaxCe,
            sam_rho: 0.0,
            shards: 1,
            seed: 0,
        }
    }
}

/// ImageNet images, used to turn the reference epoch counts into steps.
const IMAGENET_TRAIN: u64 = 1_281_167;

fn steps_for(epochs: u64, batch: u64) -> u64 {
    (epochs * IMAGENET_TRAIN).div_ceil(batch)
}

impl TrainConfig {
    /// Reference from-scratch recipes at batch size 4096: `resnet`, `vit`, `mixer`.
    pub fn preset(name: &str) -> Option<Self> {
        let batch = 4096;
        let base = Self { batch_size: batch, ..Self::default() };
        match name {
            "resnet" => Some(Self {
                optimizer: BaseOptimizer::Sgd,
                learning_rate: 0.1 * batch as f64 / 256.0,
                momentum: 0.9,
                weight_decay: 1e-3,
                warmup_steps: 5_000,
                total_steps: steps_for(90, batch as u64),
                decay: Decay::Cosine,
                clip_norm: None,
                ..base
            }),
            "vit" => Some(Self {
                learning_rate: 3e-3,
                weight_decay: 0.3,
                warmup_steps: 10_000,
                total_steps: steps_for(300, batch as u64),
                decay: Decay::Cosine,
                clip_norm: Some(1.0),
                ..base
            }),
            "mixer" => Some(Self {
                learning_rate: 3e-3,
                weight_decay: 0.3,
                warmup_steps: 10_000,
                total_steps: steps_for(300, batch as u64),
                decay: Decay::Linear,
                clip_norm: Some(1.0),
                ..base
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.warmup_steps > self.total_steps {
            errs.push(format!("warmup_steps ({}) > total_steps ({})", self.warmup_steps, self.total_steps));
        }
        if !(self.sam_rho >= 0.0 && self.sam_rho.is_finite()) {
            errs.push(format!("sam_rho must be >= 0, got {}", self.sam_rho));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                errs.push(format!("clip_norm must be > 0, got {c}"));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            errs.push(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            errs.push(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            errs.push(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            errs.push(format!("betas must be in [0, 1), got ({}, {})", self.beta1, self.beta2));
        }
        if self.adam_eps <= 0.0 {
            errs.push("adam_eps must be > 0".into());
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be >= 1".into());
        }
        if self.shards == 0 || self.shards > self.batch_size.max(1) {
            errs.push(format!("shards must be in [1, batch_size], got {}", self.shards));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs.join("; ")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamTask {
    Supervised,
    Adversarial,
    Contrastive,
}

/// Published ImageNet SAM radii per (model, task).
pub const RHO_PRESETS: &[(&str, SamTask, f64)] = &[
    ("resnet-50", SamTask::Supervised, 0.02),
    ("resnet-101", SamTask::Supervised, 0.05),
    ("resnet-152", SamTask::Supervised, 0.02),
    ("resnet-50x2", SamTask::Supervised, 0.05),
    ("resnet-101x2", SamTask::Supervised, 0.05),
    ("resnet-152x2", SamTask::Supervised, 0.05),
    ("resnet-50", SamTask::Adversarial, 0.05),
    ("resnet-101", SamTask::Adversarial, 0.05),
    ("resnet-152", SamTask::Adversarial, 0.05),
    ("vit-s32", SamTask::Supervised, 0.05),
    ("vit-s16", SamTask::Supervised, 0.1),
    ("vit-s14", SamTask::Supervised, 0.1),
    ("vit-s8", SamTask::Supervised, 0.15),
    ("vit-b32", SamTask::Supervised, 0.15),
    ("vit-b16", SamTask::Supervised, 0.2),
    ("vit-b16-aug", SamTask::Supervised, 0.05),
    ("vit-s16", SamTask::Adversarial, 0.1),
    ("vit-b32", SamTask::Adversarial, 0.1),
    ("vit-b16", SamTask::Adversarial, 0.1),
    ("vit-s16", SamTask::Contrastive, 0.02),
    ("vit-b16", SamTask::Contrastive, 0.02),
    ("mixer-s32", SamTask::Supervised, 0.1),
    ("mixer-s16", SamTask::Supervised, 0.15),
    ("mixer-s8", SamTask::Supervised, 0.2),
    ("mixer-b32", SamTask::Supervised, 0.35),
    ("mixer-b16", SamTask::Supervised, 0.6),
    ("mixer-b8", SamTask::Supervised, 0.6),
    ("mixer-b16-aug", SamTask::Supervised, 0.2),
    ("mixer-s16", SamTask::Adversarial, 0.05),
    ("mixer-b32", SamTask::Adversarial, 0.25),
    ("mixer-b16", SamTask::Adversarial, 0.25),
];

pub fn rho_preset(model: &str, task: SamTask) -> Option<f64> {
    RHO_PRESETS.iter().find(|(m, t, _)| *m == model && *t == task).map(|&(_, _, r)| r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 0.1, "lr": 1}"#);
        assert!(err.is_err());
        let ok: TrainConfig = serde_json::from_str(r#"{"sam_rho": 0.05, "optimizer": "sgd"}"#).unwrap();
        assert_eq!(ok.sam_rho, 0.05);
        assert_eq!(ok.optimizer, BaseOptimizer::Sgd);
    }

    #[test]
    fn validate_lists_violations() {
        let cfg = TrainConfig { warmup_steps: 10, total_steps: 5, sam_rho: -1.0, ..TrainConfig::default() };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("warmup_steps") && msg.contains("sam_rho"), "{msg}");
    }

    #[test]
    fn presets() {
        assert_eq!(rho_preset("vit-b16", SamTask::Supervised), Some(0.2));
        assert_eq!(rho_preset("mixer-b16", SamTask::Supervised), Some(0.6));
        let mixer = TrainConfig::preset("mixer").unwrap();
        assert_eq!(mixer.decay, Decay::Linear);
        assert_eq!(mixer.clip_norm, Some(1.0));
        mixer.validate().unwrap();
        let resnet = TrainConfig::preset("resnet").unwrap();
        assert!((resnet.learning_rate - 1.6).abs() < 1e-12);
        resnet.validate().unwrap();
    }
}
