use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{StreamEngine, StreamError};
use crate::metrics::latency::LatencySummary;
use crate::model::Real;
use crate::schema::RawEvent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Events per second.
    pub rate: f64,
    pub duration_secs: f64,
    /// Injection may fall at most this far behind schedule.
    pub max_lag_ms: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { rate: 500.0, duration_secs: 60.0, max_lag_ms: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub events: u64,
    pub elapsed: Duration,
    /// Probe label and summary, in report order; `None` when no samples.
    pub rows: Vec<(String, Option<LatencySummary>)>,
    pub max_queue_depth: usize,
    pub max_lane_backlog: usize,
    pub max_lag: Duration,
}

impl BenchReport {
    pub fn row(&self, label: &str) -> Option<&LatencySummary> {
        self.rows.iter().find(|(l, _)| l == label).and_then(|(_, s)| s.as_ref())
    }

    /// Fixed-column percentile table, one row per probe.
    pub fn table(&self) -> String {
        let mut s = LatencySummary::header();
        s.push('\n');
        for (label, summary) in &self.rows {
            match summary {
                Some(sum) => s.push_str(&sum.row(label)),
                None => {
                    let _ = write!(s, "{label:<24}{:>10}{:>10}{:>10}{:>10}{:>10}", "-", "-", "-", "-", "-");
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Injects `events` at a constant rate for the configured duration and
/// reports the probe percentiles. Fails once injection lags the schedule by
/// more than `max_lag_ms`, which is how an unbounded backlog shows up given
/// bounded lane queues.
pub fn run_bench<F: Real>(
    engine: &mut StreamEngine<F>,
    events: impl IntoIterator<Item = RawEvent>,
    cfg: &BenchConfig,
) -> Result<BenchReport, StreamError> {
    if !(cfg.rate > 0.0) || !(cfg.duration_secs >= 0.0) {
        return Err(StreamError::InvalidConfig(format!("rate {} / duration {}", cfg.rate, cfg.duration_secs)));
    }
    let ctx = engine.context().clone();
    ctx.probes().clear();
    let n = (cfg.rate * cfg.duration_secs).round() as u64;
    let max_lag = Duration::from_millis(cfg.max_lag_ms);
    let mut worst_lag = Duration::ZERO;
    let mut max_backlog = 0;
    let t0 = Instant::now();
    let mut sent = 0u64;
    for e in events.into_iter().take(n as usize) {
        let target = t0 + Duration::from_secs_f64(sent as f64 / cfg.rate);
        let now = Instant::now();
        if now < target {
            std::thread::sleep(target - now);
        }
        let lag = Instant::now().saturating_duration_since(target);
        worst_lag = worst_lag.max(lag);
        if lag > max_lag {
            return Err(StreamError::RateUnsustainable { lag_ms: lag.as_millis() as u64, at_event: sent });
        }
        engine.submit(e)?;
        sent += 1;
        max_backlog = max_backlog.max(engine.backlog());
    }
    if sent > 0 {
        engine.checkpoint()?;
        ctx.wait_probes_settled(Duration::from_secs(10));
    }
    let probes = ctx.probes();
    Ok(BenchReport {
        events: sent,
        elapsed: t0.elapsed(),
        rows: probes.labelled().iter().map(|(l, p)| (l.to_string(), p.summary())).collect(),
        max_queue_depth: ctx.max_queue_depth(),
        max_lane_backlog: max_backlog,
        max_lag: worst_lag,
    })
}

/// `events` repeated until `n` events, each pass shifted later in time by
/// the stream's span plus one day so every entity stays time ordered.
pub fn repeat_shifted(events: &[RawEvent], n: usize) -> impl Iterator<Item = RawEvent> + '_ {
    let first = events.first().map_or(0, |e| e.event_ts);
    let last = events.last().map_or(0, |e| e.event_ts);
    let shift = last - first + 86_400_000;
    let len = events.len().max(1) as u64;
    events.iter().cycle().take(if events.is_empty() { 0 } else { n }).enumerate().map(move |(i, e)| {
        let pass = i as u64 / len;
        RawEvent { event_id: i as u64, event_ts: e.event_ts + pass as i64 * shift, ..e.clone() }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Label;

    fn ev(id: &str, ts: i64) -> RawEvent {
        RawEvent {
            event_id: 0,
            entity_id: id.into(),
            event_ts: ts,
            numericals: vec![],
            categoricals: vec![],
            timestamps: vec![],
            label: Label::Legit,
            scorable: true,
        }
    }

    #[test]
    fn repeats_keep_entities_in_time_order() {
        let base = vec![ev("a", 0), ev("b", 1000), ev("a", 5000)];
        let out: Vec<_> = repeat_shifted(&base, 7).collect();
        assert_eq!(out.len(), 7);
        assert_eq!(out.iter().map(|e| e.event_id).collect::<Vec<_>>(), (0..7).collect::<Vec<_>>());
        for id in ["a", "b"] {
            let ts: Vec<_> = out.iter().filter(|e| e.entity_id == id).map(|e| e.event_ts).collect();
            assert!(ts.windows(2).all(|w| w[0] < w[1]), "{id}: {ts:?}");
        }
        assert_eq!(repeat_shifted(&[], 5).count(), 0);
    }
}
