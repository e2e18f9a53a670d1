//! Full-batch training with Adam, evaluation metrics and multi-seed runs.

mod adam;
mod metrics;
mod run;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, adam_update, AdamState};
pub use metrics::{argmax, binary_auc, evaluate, Metric};
pub use run::{
    mean_std, run_experiment, train, Aggregate, EpochRecord, ExperimentOutcome, FinalMetrics, RunRecord, RunReport,
    RunStatus, SetMetrics, TrainData, DROPOUT_STREAM_SALT,
};

use crate::data::SplitSpec;
use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// `p ← p·(1 − lr·wd)` before the Adam update.
    Decoupled,
    /// `g ← g + wd·p` (L2 penalty folded into the gradient).
    Coupled,
}

impl fmt::Display for DecayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecayMode::Decoupled => "decoupled",
            DecayMode::Coupled => "coupled",
        })
    }
}

impl FromStr for DecayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decoupled" => Ok(DecayMode::Decoupled),
            "coupled" => Ok(DecayMode::Coupled),
            _ => Err(config_err!("unknown weight decay mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub num_runs: usize,
    pub base_seed: u64,
    pub metric: Metric,
    pub decay_mode: DecayMode,
    /// Draw a fresh split per run from the run seed instead of reusing one.
    pub vary_splits: bool,
    pub split: SplitSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            weight_decay: 0.01,
            epochs: 100,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            num_runs: 5,
            base_seed: 0,
            metric: Metric::Accuracy,
            decay_mode: DecayMode::Decoupled,
            vary_splits: false,
            split: SplitSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(config_err!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(config_err!("{name} = {b} outside [0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(config_err!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.epochs == 0 {
            return Err(config_err!("epochs must be at least 1"));
        }
        if self.num_runs == 0 {
            return Err(config_err!("num_runs must be at least 1"));
        }
        Ok(())
    }
}
