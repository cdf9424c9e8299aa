use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schedule::EarlyStopping;
use super::trainer::EpochLog;
use super::{AdamState, TrainError};
use crate::model::{Model, ModelParams, Real};

/// Everything needed to continue training exactly: the epoch index also fixes
/// the sampling stream of every later epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub model: Model<F>,
    pub best: ModelParams<F>,
    pub adam: AdamState<F>,
    pub lr: f64,
    pub next_epoch: usize,
    pub schedule: EarlyStopping,
    pub history: Vec<EpochLog>,
    pub stopped: bool,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    adam_t: u64,
    lr: f64,
    next_epoch: usize,
    schedule: EarlyStopping,
    history: Vec<EpochLog>,
    stopped: bool,
}

const FILES: [&str; 4] = ["current.model", "best.model", "adam_m.model", "adam_v.model"];
const SIDECAR: &str = "optimizer.json";

impl<F: Real> Checkpoint<F> {
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir)?;
        let cfg = &self.model.config;
        let sets = [&self.model.params, &self.best, &self.adam.m, &self.adam.v];
        for (name, params) in FILES.iter().zip(sets) {
            Model { config: cfg.clone(), params: params.clone() }.save(dir.join(name))?;
        }
        let side = Sidecar {
            adam_t: self.adam.t,
            lr: self.lr,
            next_epoch: self.next_epoch,
            schedule: self.schedule.clone(),
            history: self.history.clone(),
            stopped: self.stopped,
        };
        let json = serde_json::to_string_pretty(&side).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        // Sidecar last: its presence marks a complete checkpoint.
        let tmp = dir.join(format!("{SIDECAR}.tmp"));
        std::fs::write(&tmp, json)?;
        std::fs::rename(tmp, dir.join(SIDECAR))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(dir.join(SIDECAR))?)
            .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        let model = Model::<F>::load(dir.join(FILES[0]), None)?;
        let cfg = model.config.clone();
        let mut rest = FILES[1..].iter().map(|f| Model::<F>::load(dir.join(f), Some(&cfg)).map(|m| m.params));
        let best = rest.next().unwrap()?;
        let m = rest.next().unwrap()?;
        let v = rest.next().unwrap()?;
        Ok(Checkpoint {
            model,
            best,
            adam: AdamState { m, v, t: side.adam_t },
            lr: side.lr,
            next_epoch: side.next_epoch,
            schedule: side.schedule,
            history: side.history,
            stopped: side.stopped,
        })
    }
}
