//! Offline training: epoch sampling, fraud-stratified batches with a history
//! cutoff, masked BCE, Adam, and validation-driven LR decay and early stopping.

mod adam;
pub mod baseline;
mod batch;
mod checkpoint;
pub mod loss;
mod schedule;
mod trainer;

use std::sync::atomic::{AtomicI64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use batch::{build_batch, plan_epoch_batches, sample_epoch, Batch, CardRef, TrainSeq};
pub use checkpoint::Checkpoint;
pub use schedule::{Decision, EarlyStopping};
pub use trainer::{batch_loss, train, train_step, validation_metric, EpochLog, TrainOptions, TrainOutcome, ValidationSet};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no scorable event to compute a loss over")]
    EmptyScorableSet,
    #[error("training needs at least one sequence containing fraud")]
    NoFraudCards,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_cards: usize,
    pub fraud_fraction: f64,
    pub cutoff: usize,
    pub lr: f64,
    pub patience_stop: usize,
    pub patience_lr: usize,
    pub lr_decay: f64,
    pub epoch_nonfraud_fraction: f64,
    pub max_epochs: usize,
    /// Precision at which validation recall is measured.
    pub target_precision: f64,
    /// Threads materializing batches ahead of the optimizer.
    pub producers: usize,
    /// Bounded queue depth per producer.
    pub queue_capacity: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_cards: 64,
            fraud_fraction: 0.05,
            cutoff: 200,
            lr: 0.001,
            patience_stop: 20,
            patience_lr: 10,
            lr_decay: 10.0,
            epoch_nonfraud_fraction: 0.10,
            max_epochs: 200,
            target_precision: 0.15,
            producers: 2,
            queue_capacity: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.fraud_fraction > 0.0 && self.fraud_fraction < 1.0) {
            return bad("fraud_fraction must lie in (0, 1)");
        }
        if self.cutoff == 0 {
            return bad("cutoff must be at least 1");
        }
        if self.batch_cards == 0 {
            return bad("batch_cards must be at least 1");
        }
        if self.patience_lr >= self.patience_stop {
            return bad("patience_lr must be below patience_stop");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_decay > 0.0) {
            return bad("lr and lr_decay must be positive");
        }
        if !(self.epoch_nonfraud_fraction > 0.0 && self.epoch_nonfraud_fraction <= 1.0) {
            return bad("epoch_nonfraud_fraction must lie in (0, 1]");
        }
        if self.producers == 0 || self.queue_capacity == 0 {
            return bad("producers and queue_capacity must be at least 1");
        }
        Ok(())
    }

    /// Fraud cards per batch.
    pub fn fraud_per_batch(&self) -> usize {
        // Tolerate float noise such as 0.05 * 20 = 1.0000000000000002.
        let raw = self.fraud_fraction * self.batch_cards as f64;
        let k = if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw.ceil() };
        (k as usize).clamp(1, self.batch_cards)
    }
}

/// Records the latest event timestamp that reached a gradient update.
#[derive(Debug)]
pub struct AccessLog {
    max_ts: AtomicI64,
}

impl Default for AccessLog {
    fn default() -> Self {
        AccessLog { max_ts: AtomicI64::new(i64::MIN) }
    }
}

impl AccessLog {
    pub fn record(&self, ts: i64) {
        self.max_ts.fetch_max(ts, Ordering::Relaxed);
    }

    /// `None` until something was recorded.
    pub fn max_ts(&self) -> Option<i64> {
        let v = self.max_ts.load(Ordering::Relaxed);
        (v != i64::MIN).then_some(v)
    }
}
