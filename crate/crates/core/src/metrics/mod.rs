//! Detection metrics over scored events, and latency percentile summaries.
//!
//! An event is flagged iff `score >= threshold`.

pub mod latency;

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

pub use latency::{LatencySummary, REPORT_PERCENTILES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no threshold reaches precision {0}")]
    UnachievablePrecision(f64),
    #[error("no negative events")]
    NoNegatives,
    #[error("no fraudulent events")]
    NoFraud,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEvent {
    pub score: f64,
    pub fraud: bool,
    pub amount: f64,
    pub entity_id: String,
    pub ts: i64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallAtPrecision {
    pub recall: f64,
    pub threshold: f64,
    pub precision: f64,
}

/// Largest recall over thresholds (the distinct scores) whose precision is at
/// least `target`. Among equal recalls the highest threshold wins.
pub fn recall_at_precision(s: &[ScoredEvent], target: f64) -> Result<RecallAtPrecision, MetricsError> {
    let positives = s.iter().filter(|e| e.fraud).count();
    if positives == 0 {
        return Err(MetricsError::UnachievablePrecision(target));
    }
    let mut sorted: Vec<(f64, bool)> = s.iter().map(|e| (e.score, e.fraud)).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best: Option<RecallAtPrecision> = None;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / positives as f64;
        if precision >= target && best.is_none_or(|b| recall > b.recall) {
            best = Some(RecallAtPrecision { recall, threshold: t, precision });
        }
    }
    best.ok_or(MetricsError::UnachievablePrecision(target))
}

/// FP / (FP + TN).
pub fn fp_rate(s: &[ScoredEvent], threshold: f64) -> Result<f64, MetricsError> {
    let negatives = s.iter().filter(|e| !e.fraud).count();
    if negatives == 0 {
        return Err(MetricsError::NoNegatives);
    }
    let fp = s.iter().filter(|e| !e.fraud && e.score >= threshold).count();
    Ok(fp as f64 / negatives as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoneyRecall {
    pub recall: f64,
    /// Fraud amount caught.
    pub caught: f64,
    pub total: f64,
}

/// Fraction of fraudulent amount on flagged events.
pub fn money_recall(s: &[ScoredEvent], threshold: f64) -> Result<MoneyRecall, MetricsError> {
    if !s.iter().any(|e| e.fraud) {
        return Err(MetricsError::NoFraud);
    }
    // Sum in a fixed order so the result does not depend on input order.
    let mut caught: Vec<f64> = s.iter().filter(|e| e.fraud && e.score >= threshold).map(|e| e.amount).collect();
    let mut all: Vec<f64> = s.iter().filter(|e| e.fraud).map(|e| e.amount).collect();
    caught.sort_by(f64::total_cmp);
    all.sort_by(f64::total_cmp);
    let caught: f64 = caught.iter().sum();
    let total: f64 = all.iter().sum();
    let recall = if total > 0.0 { caught / total } else { 0.0 };
    Ok(MoneyRecall { recall, caught, total })
}

pub const MS_PER_DAY: i64 = 86_400_000;

/// Per UTC day, alert the `alerts_per_day` cards with the highest maximum
/// event score that day (ties broken by entity id). A fraud card (one with at
/// least one fraud event) counts as caught if it is alerted on a day on which
/// it has a fraud event. Returns 0 when there is no fraud card.
pub fn card_recall_at_alert_budget(s: &[ScoredEvent], alerts_per_day: usize) -> f64 {
    // day -> card -> (max score, has fraud that day)
    let mut days: BTreeMap<i64, HashMap<&str, (f64, bool)>> = BTreeMap::new();
    for e in s {
        let entry = days.entry(e.ts.div_euclid(MS_PER_DAY)).or_default().entry(e.entity_id.as_str()).or_insert((f64::NEG_INFINITY, false));
        entry.0 = entry.0.max(e.score);
        entry.1 |= e.fraud;
    }
    let fraud_cards: std::collections::HashSet<&str> = s.iter().filter(|e| e.fraud).map(|e| e.entity_id.as_str()).collect();
    if fraud_cards.is_empty() {
        return 0.0;
    }
    let mut caught = std::collections::HashSet::new();
    for cards in days.values() {
        let mut ranked: Vec<(&str, f64, bool)> = cards.iter().map(|(c, (m, f))| (*c, *m, *f)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        for (card, _, fraud_today) in ranked.into_iter().take(alerts_per_day) {
            if fraud_today {
                caught.insert(card);
            }
        }
    }
    caught.len() as f64 / fraud_cards.len() as f64
}
