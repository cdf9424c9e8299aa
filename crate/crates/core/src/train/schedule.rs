use serde::{Deserialize, Serialize};

/// What to do after observing an epoch's validation metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    /// New best; keep this checkpoint.
    Improved,
    Continue,
    /// Divide the learning rate.
    DecayLr,
    Stop,
}

/// Patience bookkeeping over a higher-is-better metric. The first
/// observation sets the baseline. After `patience_lr` observations without
/// improvement (counted since the last improvement or decay) the learning
/// rate decays; after `patience_stop` without improvement training stops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience_stop: usize,
    pub patience_lr: usize,
    best: Option<f64>,
    best_epoch: usize,
    epochs: usize,
    since_best: usize,
    since_decay: usize,
}

impl EarlyStopping {
    pub fn new(patience_stop: usize, patience_lr: usize) -> Self {
        EarlyStopping { patience_stop, patience_lr, best: None, best_epoch: 0, epochs: 0, since_best: 0, since_decay: 0 }
    }

    pub fn observe(&mut self, metric: f64) -> Decision {
        let epoch = self.epochs;
        self.epochs += 1;
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.since_best = 0;
            self.since_decay = 0;
            return Decision::Improved;
        }
        self.since_best += 1;
        self.since_decay += 1;
        if self.since_best >= self.patience_stop {
            Decision::Stop
        } else if self.since_decay >= self.patience_lr {
            self.since_decay = 0;
            Decision::DecayLr
        } else {
            Decision::Continue
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Zero-based index of the best observation.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn observed(&self) -> usize {
        self.epochs
    }
}
