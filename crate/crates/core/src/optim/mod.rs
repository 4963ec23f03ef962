//! Base optimizers, learning-rate schedules, clipping, and the SAM wrapper.

mod base;
mod config;
mod sam;

pub use base::{base_step, clip_global_norm, global_norm, lr_at, OptimizerState};
pub use config::{rho_preset, BaseOptimizer, Decay, SamTask, TrainConfig, RHO_PRESETS};
pub use sam::{sam_perturbation, sam_step, sam_step_sharded, StepOutcome, DEGENERATE_GRAD_NORM};
