//! Per-entity chronological sequences built from a flat event stream.

mod file;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::prep::{FeatureVector, FittedPipeline};
use crate::schema::{Label, RawEvent};

pub use file::{SequenceFileReader, SEQ_FILE_VERSION};

#[derive(Debug, Error)]
pub enum SeqError {
    #[error("corrupt sequence file: {0}")]
    Corrupt(String),
    #[error("sequence file was built for schema {found:016x}, expected {expected:016x}")]
    SchemaMismatch { expected: u64, found: u64 },
    #[error("record index {index} out of range ({len} records)")]
    OutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One transformed event inside a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqEvent {
    pub event_id: u64,
    pub event_ts: i64,
    pub label: Label,
    pub scorable: bool,
    pub fv: FeatureVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub entity_id: String,
    pub events: Vec<SeqEvent>,
    pub has_fraud: bool,
}

impl SequenceRecord {
    pub fn new(entity_id: String, events: Vec<SeqEvent>) -> Self {
        let has_fraud = events.iter().any(|e| e.label.is_fraud());
        SequenceRecord { entity_id, events, has_fraud }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn fvs(&self) -> Vec<FeatureVector> {
        self.events.iter().map(|e| e.fv.clone()).collect()
    }

    pub fn first_ts(&self) -> Option<i64> {
        self.events.first().map(|e| e.event_ts)
    }

    pub fn last_ts(&self) -> Option<i64> {
        self.events.last().map(|e| e.event_ts)
    }
}

/// An immutable, ordinal-indexed collection of sequences.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceStore {
    pub schema_hash: u64,
    pub records: Vec<SequenceRecord>,
}

impl SequenceStore {
    pub fn new(schema_hash: u64, records: Vec<SequenceRecord>) -> Self {
        SequenceStore { schema_hash, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&SequenceRecord> {
        self.records.get(i)
    }

    /// Records `i, i+1, ...` in order.
    pub fn scan_from(&self, i: usize) -> impl Iterator<Item = &SequenceRecord> {
        self.records.iter().skip(i)
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().map(SequenceRecord::len).sum()
    }
}

/// Groups events by entity, sorts each group by timestamp (stable, so ties
/// keep ingestion order) and transforms it. Records come out ordered by
/// entity id.
pub fn build_sequences<I>(events: I, pipeline: &FittedPipeline) -> crate::Result<SequenceStore>
where
    I: IntoIterator<Item = RawEvent>,
{
    let mut groups: BTreeMap<String, Vec<RawEvent>> = BTreeMap::new();
    for e in events {
        groups.entry(e.entity_id.clone()).or_default().push(e);
    }
    let mut records = Vec::with_capacity(groups.len());
    for (entity_id, mut evs) in groups {
        evs.sort_by_key(|e| e.event_ts);
        let fvs = pipeline.apply_sequence(&evs)?;
        let events = evs
            .iter()
            .zip(fvs)
            .map(|(e, fv)| SeqEvent { event_id: e.event_id, event_ts: e.event_ts, label: e.label, scorable: e.scorable, fv })
            .collect();
        records.push(SequenceRecord::new(entity_id, events));
    }
    Ok(SequenceStore::new(pipeline.schema_hash, records))
}

/// `(fraud, non_fraud)` partition by `has_fraud`, preserving order.
pub fn split_fraud(store: SequenceStore) -> (SequenceStore, SequenceStore) {
    let hash = store.schema_hash;
    let (fraud, clean): (Vec<_>, Vec<_>) = store.records.into_iter().partition(|r| r.has_fraud);
    (SequenceStore::new(hash, fraud), SequenceStore::new(hash, clean))
}

/// Keeps sequences with at least one event in `[t0, t1)`, with their whole
/// history.
pub fn filter_by_period(store: SequenceStore, t0: i64, t1: i64) -> SequenceStore {
    let hash = store.schema_hash;
    let records =
        store.records.into_iter().filter(|r| r.events.iter().any(|e| e.event_ts >= t0 && e.event_ts < t1)).collect();
    SequenceStore::new(hash, records)
}

/// Drops every event at or after `t`, then drops sequences left empty.
/// `has_fraud` is recomputed from what remains.
pub fn truncate_before(store: SequenceStore, t: i64) -> SequenceStore {
    let hash = store.schema_hash;
    let records = store
        .records
        .into_iter()
        .filter_map(|r| {
            let events: Vec<SeqEvent> = r.events.into_iter().filter(|e| e.event_ts < t).collect();
            (!events.is_empty()).then(|| SequenceRecord::new(r.entity_id, events))
        })
        .collect();
    SequenceStore::new(hash, records)
}

/// Longest first; equal lengths ordered by entity id.
pub fn sort_by_length_desc(mut store: SequenceStore) -> SequenceStore {
    store.records.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.entity_id.cmp(&b.entity_id)));
    store
}
