use rand::seq::SliceRandom;
use rand::Rng;

use super::{AccessLog, TrainConfig, TrainError};
use crate::prep::FeatureVector;
use crate::seq::{SequenceRecord, SequenceStore};

/// A card drawn for training, by ordinal in its store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CardRef {
    Fraud(usize),
    NonFraud(usize),
}

impl CardRef {
    pub fn is_fraud(self) -> bool {
        matches!(self, CardRef::Fraud(_))
    }
}

/// Every fraud card plus `floor(epoch_nonfraud_fraction × |non-fraud|)`
/// non-fraud cards drawn with replacement, shuffled.
pub fn sample_epoch<R: Rng>(
    fraud: &SequenceStore,
    nonfraud: &SequenceStore,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<CardRef>, TrainError> {
    if fraud.is_empty() {
        return Err(TrainError::NoFraudCards);
    }
    let n_clean = (cfg.epoch_nonfraud_fraction * nonfraud.len() as f64).floor() as usize;
    let mut ids: Vec<CardRef> = (0..fraud.len()).map(CardRef::Fraud).collect();
    if !nonfraud.is_empty() {
        ids.extend((0..n_clean).map(|_| CardRef::NonFraud(rng.gen_range(0..nonfraud.len()))));
    }
    ids.shuffle(rng);
    Ok(ids)
}

/// Splits an epoch into batches of `batch_cards` cards with exactly
/// `fraud_per_batch` fraud cards each. The non-fraud draw sets the number of
/// batches; fraud cards are taken in epoch order and, once used up, drawn
/// again with replacement. The last batch may hold fewer non-fraud cards.
pub fn plan_epoch_batches<R: Rng>(epoch: &[CardRef], n_fraud_cards: usize, cfg: &TrainConfig, rng: &mut R) -> Vec<Vec<CardRef>> {
    let k = cfg.fraud_per_batch();
    let m = cfg.batch_cards - k;
    let fraud: Vec<CardRef> = epoch.iter().copied().filter(|c| c.is_fraud()).collect();
    let clean: Vec<CardRef> = epoch.iter().copied().filter(|c| !c.is_fraud()).collect();
    let n_batches = if m == 0 || clean.is_empty() { fraud.len().div_ceil(k) } else { clean.len().div_ceil(m) };
    let mut fraud_iter = fraud.into_iter();
    let mut clean_iter = clean.into_iter();
    (0..n_batches)
        .map(|_| {
            let mut b: Vec<CardRef> = (0..k)
                .map(|_| fraud_iter.next().unwrap_or_else(|| CardRef::Fraud(rng.gen_range(0..n_fraud_cards))))
                .collect();
            b.extend(clean_iter.by_ref().take(m));
            b
        })
        .collect()
}

/// One card's most recent events, at most `cutoff` of them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSeq {
    pub fvs: Vec<FeatureVector>,
    pub labels: Vec<f64>,
    /// Scorable with a known label: contributes to the loss.
    pub scorable: Vec<bool>,
}

impl TrainSeq {
    pub fn from_record(r: &SequenceRecord, cutoff: usize) -> Self {
        let start = r.len().saturating_sub(cutoff);
        let tail = &r.events[start..];
        TrainSeq {
            fvs: tail.iter().map(|e| e.fv.clone()).collect(),
            labels: tail.iter().map(|e| e.label.target().unwrap_or(0.0)).collect(),
            scorable: tail.iter().map(|e| e.scorable && e.label.is_known()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.fvs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fvs.is_empty()
    }
}

/// Truncated sequences padded (logically, at the end) to the longest member.
/// Padded positions are never stepped.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub cards: Vec<CardRef>,
    pub seqs: Vec<TrainSeq>,
    pub max_len: usize,
}

impl Batch {
    /// `true` at padded positions of member `i`.
    pub fn padding_mask(&self, i: usize) -> Vec<bool> {
        (0..self.max_len).map(|t| t >= self.seqs[i].len()).collect()
    }

    /// Loss mask of member `i` over the padded length.
    pub fn scorable_mask(&self, i: usize) -> Vec<bool> {
        (0..self.max_len).map(|t| self.seqs[i].scorable.get(t).copied().unwrap_or(false)).collect()
    }

    pub fn n_scorable(&self) -> usize {
        self.seqs.iter().map(|s| s.scorable.iter().filter(|x| **x).count()).sum()
    }

    pub fn n_fraud_cards(&self) -> usize {
        self.cards.iter().filter(|c| c.is_fraud()).count()
    }
}

pub fn build_batch(
    cards: &[CardRef],
    fraud: &SequenceStore,
    nonfraud: &SequenceStore,
    cutoff: usize,
    log: Option<&AccessLog>,
) -> Batch {
    let seqs: Vec<TrainSeq> = cards
        .iter()
        .map(|c| {
            let r = match *c {
                CardRef::Fraud(i) => &fraud.records[i],
                CardRef::NonFraud(i) => &nonfraud.records[i],
            };
            if let (Some(log), Some(ts)) = (log, r.last_ts()) {
                log.record(ts);
            }
            TrainSeq::from_record(r, cutoff)
        })
        .collect();
    let max_len = seqs.iter().map(TrainSeq::len).max().unwrap_or(0);
    Batch { cards: cards.to_vec(), seqs, max_len }
}
