//! Frequency-ranked categorical indexing.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const DEFAULT_MIN_OCCURRENCES: usize = 5;
pub const DEFAULT_EMBEDDING_CAP: usize = 10_000;

/// Maps each kept value to its frequency rank. Rare values, values ranked at
/// or beyond the cap, and values never seen share the overflow index; missing
/// values get their own reserved index right after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "IndexerRepr", into = "IndexerRepr")]
pub struct CategoricalIndexer {
    values: Vec<String>,
    min_occurrences: usize,
    embedding_cap: usize,
    lookup: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct IndexerRepr {
    /// Kept values, most frequent first; position is the index.
    values: Vec<String>,
    min_occurrences: usize,
    embedding_cap: usize,
}

impl From<IndexerRepr> for CategoricalIndexer {
    fn from(r: IndexerRepr) -> Self {
        Self::from_ranked(r.values, r.min_occurrences, r.embedding_cap)
    }
}

impl From<CategoricalIndexer> for IndexerRepr {
    fn from(c: CategoricalIndexer) -> Self {
        IndexerRepr {
            values: c.values,
            min_occurrences: c.min_occurrences,
            embedding_cap: c.embedding_cap,
        }
    }
}

/// Ranks values by descending count, ties broken lexicographically, keeping
/// only values seen at least `min_occurrences` times and at most `cap` of them.
pub fn fit_categorical<'a, I>(values: I, min_occurrences: usize, cap: usize) -> CategoricalIndexer
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_occurrences.max(1))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(cap);
    CategoricalIndexer::from_ranked(
        ranked.into_iter().map(|(v, _)| v.to_string()).collect(),
        min_occurrences,
        cap,
    )
}

impl CategoricalIndexer {
    fn from_ranked(values: Vec<String>, min_occurrences: usize, embedding_cap: usize) -> Self {
        let lookup = values
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i as u32))
            .collect();
        CategoricalIndexer { values, min_occurrences, embedding_cap, lookup }
    }

    /// l_max: shared by rare and unseen values.
    pub fn overflow_index(&self) -> u32 {
        self.values.len() as u32
    }

    pub fn missing_index(&self) -> u32 {
        self.values.len() as u32 + 1
    }

    /// Number of distinct indices this indexer can emit.
    pub fn cardinality(&self) -> usize {
        self.values.len() + 2
    }

    pub fn kept_values(&self) -> &[String] {
        &self.values
    }

    pub fn apply(&self, x: Option<&str>) -> u32 {
        match x {
            None => self.missing_index(),
            Some(v) => self.lookup.get(v).copied().unwrap_or_else(|| self.overflow_index()),
        }
    }
}
