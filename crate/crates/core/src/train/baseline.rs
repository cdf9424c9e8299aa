//! Memoryless logistic regression over the same feature vectors: one weight
//! per dense feature plus a one-hot weight per categorical value. It sees each
//! event alone, with no recurrent state.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;

use super::batch::{plan_epoch_batches, sample_epoch, TrainSeq};
use super::loss::CLAMP;
use super::schedule::{Decision, EarlyStopping};
use super::{TrainConfig, TrainError, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::metrics::{recall_at_precision, ScoredEvent};
use crate::model::sigmoid;
use crate::prep::FeatureVector;
use crate::seq::SequenceStore;

use super::trainer::ValidationSet;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticBaseline {
    n_dense: usize,
    /// Offset of each categorical's one-hot block inside `w`.
    cat_offsets: Vec<usize>,
    cat_cards: Vec<usize>,
    /// Bias, dense weights, then the one-hot blocks.
    w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub lr: f64,
    pub events_per_step: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { lr: 0.01, events_per_step: 256, max_epochs: 60, patience: 8 }
    }
}

impl LogisticBaseline {
    pub fn zeros(n_dense: usize, cat_cards: &[usize]) -> Self {
        let mut off = 1 + n_dense;
        let cat_offsets = cat_cards
            .iter()
            .map(|c| {
                let o = off;
                off += c;
                o
            })
            .collect();
        LogisticBaseline { n_dense, cat_offsets, cat_cards: cat_cards.to_vec(), w: vec![0.0; off] }
    }

    fn logit(&self, fv: &FeatureVector) -> f64 {
        let mut z = self.w[0];
        for (k, x) in fv.dense.iter().enumerate() {
            z += self.w[1 + k] * x;
        }
        for (j, &c) in fv.cat.iter().enumerate() {
            z += self.w[self.cat_offsets[j] + (c as usize).min(self.cat_cards[j] - 1)];
        }
        z
    }

    pub fn score(&self, fv: &FeatureVector) -> f64 {
        sigmoid(self.logit(fv))
    }

    fn accumulate_grad(&self, fv: &FeatureVector, dlogit: f64, g: &mut [f64]) {
        g[0] += dlogit;
        for (k, x) in fv.dense.iter().enumerate() {
            g[1 + k] += dlogit * x;
        }
        for (j, &c) in fv.cat.iter().enumerate() {
            g[self.cat_offsets[j] + (c as usize).min(self.cat_cards[j] - 1)] += dlogit;
        }
    }

    pub fn scored_events(&self, val: &ValidationSet) -> Vec<ScoredEvent> {
        let in_window = |ts: i64| val.window.is_none_or(|(t0, t1)| ts >= t0 && ts < t1);
        val.store
            .records
            .par_iter()
            .flat_map_iter(|r| {
                r.events.iter().filter(|e| e.scorable && e.label.is_known() && in_window(e.event_ts)).map(|e| ScoredEvent {
                    score: self.score(&e.fv),
                    fraud: e.label.is_fraud(),
                    amount: 0.0,
                    entity_id: r.entity_id.clone(),
                    ts: e.event_ts,
                })
            })
            .collect()
    }

    pub fn validation_metric(&self, val: &ValidationSet, target_precision: f64) -> f64 {
        recall_at_precision(&self.scored_events(val), target_precision).map(|r| r.recall).unwrap_or(0.0)
    }

    pub fn n_params(&self) -> usize {
        self.w.len()
    }
}

/// Fits the baseline with the same card sampling and cutoff as the GRU
/// trainer, then shuffles the sampled events and takes Adam steps on
/// mini-batches. Returns the best model by validation metric.
pub fn fit_baseline(
    n_dense: usize,
    cat_cards: &[usize],
    fraud: &SequenceStore,
    nonfraud: &SequenceStore,
    val: &ValidationSet,
    cfg: &TrainConfig,
    bcfg: &BaselineConfig,
) -> Result<(LogisticBaseline, f64), TrainError> {
    cfg.check()?;
    let mut model = LogisticBaseline::zeros(n_dense, cat_cards);
    let mut best = (model.clone(), f64::NEG_INFINITY);
    let (mut m, mut v) = (vec![0.0; model.w.len()], vec![0.0; model.w.len()]);
    let mut t = 0i32;
    let mut schedule = EarlyStopping::new(bcfg.patience, bcfg.patience / 2);
    let mut lr = bcfg.lr;
    for epoch in 0..bcfg.max_epochs {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xba5e);
        rng.set_stream(epoch as u64);
        let ids = sample_epoch(fraud, nonfraud, cfg, &mut rng)?;
        let mut events: Vec<(FeatureVector, f64)> = Vec::new();
        for cards in plan_epoch_batches(&ids, fraud.len(), cfg, &mut rng) {
            for c in cards {
                let r = match c {
                    super::CardRef::Fraud(i) => &fraud.records[i],
                    super::CardRef::NonFraud(i) => &nonfraud.records[i],
                };
                let s = TrainSeq::from_record(r, cfg.cutoff);
                for ((fv, y), keep) in s.fvs.into_iter().zip(s.labels).zip(s.scorable) {
                    if keep {
                        events.push((fv, y));
                    }
                }
            }
        }
        events.shuffle(&mut rng);
        for chunk in events.chunks(bcfg.events_per_step.max(1)) {
            let mut g = vec![0.0; model.w.len()];
            let norm = 1.0 / chunk.len() as f64;
            for (fv, y) in chunk {
                let p = model.score(fv);
                let d = if !(CLAMP..=1.0 - CLAMP).contains(&p) { 0.0 } else { (p - y) * norm };
                model.accumulate_grad(fv, d, &mut g);
            }
            t += 1;
            let (c1, c2) = (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t));
            for i in 0..g.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                model.w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
        let metric = model.validation_metric(val, cfg.target_precision);
        match schedule.observe(metric) {
            Decision::Improved => best = (model.clone(), metric),
            Decision::DecayLr => lr /= cfg.lr_decay,
            Decision::Stop => break,
            Decision::Continue => {}
        }
    }
    Ok(best)
}
