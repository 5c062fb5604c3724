//! Pretraining, downstream training and evaluation protocols.

pub mod ablation;
pub mod downstream;
pub mod lowdata;
pub mod loso;
pub mod metrics;
pub mod pretrain;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ablation::{run_ablation, AblationKind, AblationOptions, AblationReport, AblationRow, Experiment};
pub use downstream::{labeled_windows, predict_windows, train_downstream, TrainMode};
pub use lowdata::{run_low_data_study, LowDataReport, SampleSize};
pub use loso::{evaluate_loso, evaluate_loso_with, loso_report, LosoSpec};
pub use metrics::{compute_metrics, F1Average, FoldResult, Metrics, MetricsReport};
pub use pretrain::{evaluate_pretext, pretrain, EpochLog};

/// Optimiser and schedule of one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    /// Set from the run seed, never from a config file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Pretext-stage recipe.
    fn default() -> Self {
        Self {
            lr: 5e-3,
            batch_size: 32,
            epochs: 20,
            weight_decay: 5e-7,
            momentum: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Downstream recipe for the WESAD protocol.
    pub fn wesad() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 128,
            ..Self::default()
        }
    }

    /// Downstream recipe for CASE and K-EmoCon.
    pub fn case_kemocon() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            epochs: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("weight_decay must be >= 0 and momentum in [0, 1)"));
        }
        Ok(())
    }
}
