use std::io::Write;
use std::path::Path;

use crossbeam_channel::bounded;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::batch::{build_batch, plan_epoch_batches, sample_epoch, Batch};
use super::checkpoint::Checkpoint;
use super::loss::{bce_logit_grad, masked_bce};
use super::schedule::{Decision, EarlyStopping};
use super::{adam_step, AccessLog, AdamState, TrainConfig, TrainError};
use crate::batch_infer::{plan_store, score_store, BatchPlan, DEFAULT_EVENT_BUDGET};
use crate::metrics::{recall_at_precision, ScoredEvent};
use crate::model::{Model, ModelParams, Real};
use crate::seq::{sort_by_length_desc, SequenceStore};

/// Sequences per gradient work unit. Fixed so the reduction order, and hence
/// the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 4;

/// Held-out sequences, with full histories, and the window whose events count.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub store: SequenceStore,
    pub window: Option<(i64, i64)>,
    plan: BatchPlan,
}

impl ValidationSet {
    pub fn new(store: SequenceStore, window: Option<(i64, i64)>) -> Self {
        let store = sort_by_length_desc(store);
        let plan = plan_store(&store, DEFAULT_EVENT_BUDGET);
        ValidationSet { store, window, plan }
    }

    /// Scored, labelled, scorable events inside the window.
    pub fn scored_events<F: Real>(&self, model: &Model<F>) -> Result<Vec<ScoredEvent>, TrainError> {
        let scores = score_store(model, &self.store, &self.plan)?;
        let in_window = |ts: i64| self.window.is_none_or(|(t0, t1)| ts >= t0 && ts < t1);
        let mut out = Vec::new();
        for (r, s) in self.store.records.iter().zip(scores) {
            for (e, y) in r.events.iter().zip(s) {
                if e.scorable && e.label.is_known() && in_window(e.event_ts) {
                    out.push(ScoredEvent {
                        score: y.to_f64().unwrap_or(f64::NAN),
                        fraud: e.label.is_fraud(),
                        amount: 0.0,
                        entity_id: r.entity_id.clone(),
                        ts: e.event_ts,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Recall at `target_precision` on the validation set; 0 when no threshold
/// reaches that precision.
pub fn validation_metric<F: Real>(model: &Model<F>, val: &ValidationSet, target_precision: f64) -> Result<f64, TrainError> {
    let events = val.scored_events(model)?;
    Ok(recall_at_precision(&events, target_precision).map(|r| r.recall).unwrap_or(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_metric: f64,
    pub lr: f64,
    pub batches: usize,
    pub decision: String,
}

impl EpochLog {
    /// Stable `key=value` line.
    pub fn line(&self) -> String {
        format!(
            "epoch={} loss={:.6} val_metric={:.6} lr={:e} batches={} decision={}",
            self.epoch, self.loss, self.val_metric, self.lr, self.batches, self.decision
        )
    }
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    pub access_log: Option<&'a AccessLog>,
    /// Appends one [`EpochLog::line`] per epoch.
    pub metrics_log: Option<&'a Path>,
    /// Overwritten after every epoch.
    pub checkpoint_dir: Option<&'a Path>,
    pub on_epoch: Option<&'a (dyn Fn(&EpochLog) + Sync)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    /// Parameters of the best validation epoch.
    pub model: Model<F>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub history: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Loss and gradient of the batch's mean BCE over all its scorable events.
/// `None` when the batch has nothing scorable.
fn batch_gradients<F: Real>(model: &Model<F>, batch: &Batch) -> Result<Option<(F, ModelParams<F>)>, TrainError> {
    let n = batch.n_scorable();
    if n == 0 {
        return Ok(None);
    }
    let norm = F::one() / F::of(n as f64);
    let partials: Vec<(F, ModelParams<F>)> = batch
        .seqs
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = ModelParams::zeros(&model.config);
            let mut loss = F::zero();
            for seq in chunk {
                if seq.is_empty() {
                    continue;
                }
                let fwd = model.forward_sequence(&seq.fvs, &model.zero_state())?;
                let k = seq.scorable.iter().filter(|s| **s).count();
                if k == 0 {
                    // Nothing to learn from: no scorable step means a zero gradient.
                    continue;
                }
                let labels: Vec<F> = seq.labels.iter().map(|v| F::of(*v)).collect();
                loss = loss + masked_bce(&fwd.scores, &labels, &seq.scorable)? * F::of(k as f64);
                let dlogits: Vec<F> = fwd
                    .tape
                    .iter()
                    .zip(labels.iter().zip(&seq.scorable))
                    .map(|(t, (y, s))| if *s { bce_logit_grad(t.y_hat, *y) * norm } else { F::zero() })
                    .collect();
                model.backward_tape(&fwd.tape, &dlogits, &mut grads);
            }
            Ok((loss, grads))
        })
        .collect::<Result<_, TrainError>>()?;
    let mut iter = partials.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss = loss + l;
        grads.add_assign(&g);
    }
    Ok(Some((loss * norm, grads)))
}

/// Mean BCE of the model over the batch's scorable events.
pub fn batch_loss<F: Real>(model: &Model<F>, batch: &Batch) -> Result<F, TrainError> {
    let (mut y_hat, mut y, mut mask) = (Vec::new(), Vec::new(), Vec::new());
    for seq in &batch.seqs {
        y_hat.extend(model.score_sequence(&seq.fvs, &mut model.zero_state())?);
        y.extend(seq.labels.iter().map(|v| F::of(*v)));
        mask.extend_from_slice(&seq.scorable);
    }
    masked_bce(&y_hat, &y, &mask)
}

/// One optimizer update on `batch`; returns the pre-update loss, or `None`
/// (and no update) when the batch has nothing scorable.
pub fn train_step<F: Real>(model: &mut Model<F>, batch: &Batch, adam: &mut AdamState<F>, lr: f64) -> Result<Option<F>, TrainError> {
    let Some((loss, grads)) = batch_gradients(model, batch)? else {
        return Ok(None);
    };
    adam_step(&mut model.params, &grads, adam, lr)?;
    Ok(Some(loss))
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Runs one epoch's batches: producers materialize batches into bounded
/// queues, the caller's thread applies them strictly in plan order.
fn run_epoch<F: Real>(
    model: &mut Model<F>,
    adam: &mut AdamState<F>,
    lr: f64,
    plan: &[Vec<super::CardRef>],
    fraud: &SequenceStore,
    nonfraud: &SequenceStore,
    cfg: &TrainConfig,
    log: Option<&AccessLog>,
) -> Result<(f64, usize), TrainError> {
    let workers = cfg.producers.min(plan.len()).max(1);
    std::thread::scope(|scope| {
        let mut receivers = Vec::with_capacity(workers);
        for w in 0..workers {
            let (tx, rx) = bounded::<Batch>(cfg.queue_capacity);
            receivers.push(rx);
            scope.spawn(move || {
                for cards in plan.iter().skip(w).step_by(workers) {
                    if tx.send(build_batch(cards, fraud, nonfraud, cfg.cutoff, log)).is_err() {
                        break;
                    }
                }
            });
        }
        let (mut total, mut used) = (0.0, 0usize);
        for i in 0..plan.len() {
            let batch = receivers[i % workers].recv().expect("producer ended early");
            if let Some(loss) = train_step(model, &batch, adam, lr)? {
                total += loss.to_f64().unwrap_or(f64::NAN);
                used += 1;
            }
        }
        Ok((if used > 0 { total / used as f64 } else { f64::NAN }, used))
    })
}

fn append_line(path: &Path, line: &str) -> std::io::Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")
}

/// Trains from `model` (or from `resume`), validating after every epoch and
/// returning the best parameters seen.
pub fn train<F: Real>(
    model: Model<F>,
    fraud: &SequenceStore,
    nonfraud: &SequenceStore,
    val: &ValidationSet,
    cfg: &TrainConfig,
    opts: &TrainOptions<'_>,
    resume: Option<Checkpoint<F>>,
) -> Result<TrainOutcome<F>, TrainError> {
    cfg.check()?;
    if fraud.is_empty() {
        return Err(TrainError::NoFraudCards);
    }
    let mut ck = match resume {
        Some(c) => c,
        None => Checkpoint {
            adam: AdamState::new(&model.config),
            best: model.params.clone(),
            model,
            lr: cfg.lr,
            next_epoch: 0,
            schedule: EarlyStopping::new(cfg.patience_stop, cfg.patience_lr),
            history: Vec::new(),
            stopped: false,
        },
    };
    while !ck.stopped && ck.next_epoch < cfg.max_epochs {
        let epoch = ck.next_epoch;
        let mut rng = epoch_rng(cfg.seed, epoch);
        let ids = sample_epoch(fraud, nonfraud, cfg, &mut rng)?;
        let plan = plan_epoch_batches(&ids, fraud.len(), cfg, &mut rng);
        let (loss, used) = run_epoch(&mut ck.model, &mut ck.adam, ck.lr, &plan, fraud, nonfraud, cfg, opts.access_log)?;
        let metric = validation_metric(&ck.model, val, cfg.target_precision)?;
        let decision = ck.schedule.observe(metric);
        let entry = EpochLog {
            epoch,
            loss,
            val_metric: metric,
            lr: ck.lr,
            batches: used,
            decision: format!("{decision:?}").to_lowercase(),
        };
        match decision {
            Decision::Improved => ck.best = ck.model.params.clone(),
            Decision::DecayLr => ck.lr /= cfg.lr_decay,
            Decision::Stop => ck.stopped = true,
            Decision::Continue => {}
        }
        if let Some(p) = opts.metrics_log {
            append_line(p, &entry.line())?;
        }
        if let Some(cb) = opts.on_epoch {
            cb(&entry);
        }
        ck.history.push(entry);
        ck.next_epoch += 1;
        if let Some(dir) = opts.checkpoint_dir {
            ck.save(dir)?;
        }
    }
    Ok(TrainOutcome {
        model: Model { config: ck.model.config.clone(), params: ck.best },
        best_epoch: ck.schedule.best_epoch(),
        best_metric: ck.schedule.best().unwrap_or(0.0),
        history: ck.history,
        stopped_early: ck.stopped,
    })
}
