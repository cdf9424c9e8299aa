//! Scoring whole stores with full histories. Sequences are grouped, longest
//! first, so that every group holds about the same number of events.

use rayon::prelude::*;

use crate::model::{Model, ModelError, Real};
use crate::seq::{SequenceRecord, SequenceStore};

pub const DEFAULT_EVENT_BUDGET: usize = 8192;

/// Ordered groups of record ordinals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub groups: Vec<Vec<usize>>,
    pub budget: usize,
}

impl BatchPlan {
    /// Padded event slots: cards × longest member, summed over groups.
    pub fn padded_events(&self, lengths: &[usize]) -> usize {
        self.groups.iter().map(|g| g.len() * g.iter().map(|i| lengths[*i]).max().unwrap_or(0)).sum()
    }
}

/// Greedy grouping over lengths sorted in non-increasing order: a group grows
/// while `(count + 1) × (its first, longest, length) ≤ budget`. A sequence
/// longer than the budget is a group on its own.
pub fn plan_batches(lengths: &[usize], budget: usize) -> BatchPlan {
    assert!(budget > 0, "event budget must be positive");
    debug_assert!(lengths.windows(2).all(|w| w[0] >= w[1]), "lengths must be sorted descending");
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut longest = 0usize;
    for (i, &len) in lengths.iter().enumerate() {
        if !current.is_empty() && (current.len() + 1) * longest <= budget {
            current.push(i);
            continue;
        }
        if !current.is_empty() {
            groups.push(std::mem::take(&mut current));
        }
        current.push(i);
        longest = len.max(1);
    }
    if !current.is_empty() {
        groups.push(current);
    }
    BatchPlan { groups, budget }
}

pub fn plan_store(store: &SequenceStore, budget: usize) -> BatchPlan {
    let lengths: Vec<usize> = store.records.iter().map(SequenceRecord::len).collect();
    plan_batches(&lengths, budget)
}

/// One emitted score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLine {
    pub event_id: u64,
    pub entity_id: String,
    pub ts: i64,
    pub score: f64,
}

impl ScoreLine {
    /// `{"event_id":..,"entity_id":..,"ts":..,"score":..}` with nine
    /// significant digits in the score.
    pub fn to_json_line(&self) -> String {
        format!(
            "{{\"event_id\":{},\"entity_id\":{},\"ts\":{},\"score\":{}}}",
            self.event_id,
            serde_json::Value::String(self.entity_id.clone()),
            self.ts,
            sig9(self.score)
        )
    }
}

/// Fixed-point rendering with nine significant digits.
pub fn sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".into() } else { format!("{x}") };
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (8 - mag).clamp(0, 40) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding can carry into a new leading digit; drop the extra one.
    if decimals > 0 && format!("{:.0e}", x.abs()).ends_with(&format!("e{}", mag + 1)) {
        return format!("{x:.prec$}", prec = decimals - 1);
    }
    s
}

/// Scores one group: time step `t` advances every member longer than `t`.
/// A singleton longer than the budget is scored in budget-sized chunks with
/// the state carried across.
fn score_group<F: Real>(model: &Model<F>, members: &[&SequenceRecord], budget: usize) -> Result<Vec<Vec<F>>, ModelError> {
    if members.len() == 1 {
        let r = members[0];
        let mut state = model.zero_state();
        let mut out = Vec::with_capacity(r.len());
        let fvs: Vec<_> = r.events.iter().map(|e| e.fv.clone()).collect();
        for chunk in fvs.chunks(budget.max(1)) {
            out.extend(model.score_sequence(chunk, &mut state)?);
        }
        return Ok(vec![out]);
    }
    let mut states: Vec<_> = members.iter().map(|_| model.zero_state()).collect();
    let mut outs: Vec<Vec<F>> = members.iter().map(|r| Vec::with_capacity(r.len())).collect();
    let mut trace = model.new_trace();
    let longest = members.iter().map(|r| r.len()).max().unwrap_or(0);
    for t in 0..longest {
        for (k, r) in members.iter().enumerate() {
            if let Some(e) = r.events.get(t) {
                outs[k].push(model.step(&e.fv, &mut states[k], &mut trace)?);
            }
        }
    }
    Ok(outs)
}

/// Scores of every event of every record, indexed like `store.records`.
/// Groups run in parallel.
pub fn score_store<F: Real>(model: &Model<F>, store: &SequenceStore, plan: &BatchPlan) -> Result<Vec<Vec<F>>, ModelError> {
    let per_group: Vec<Vec<Vec<F>>> = plan
        .groups
        .par_iter()
        .map(|g| {
            let members: Vec<&SequenceRecord> = g.iter().map(|i| &store.records[*i]).collect();
            score_group(model, &members, plan.budget)
        })
        .collect::<Result<_, _>>()?;
    let mut out: Vec<Vec<F>> = vec![Vec::new(); store.len()];
    for (g, scores) in plan.groups.iter().zip(per_group) {
        for (i, s) in g.iter().zip(scores) {
            out[*i] = s;
        }
    }
    Ok(out)
}

/// Scores every scorable event with `t0 <= ts < t1` (all of them when
/// `window` is `None`). Output is ordered by group, then card, then event.
pub fn score_all<F: Real>(
    model: &Model<F>,
    store: &SequenceStore,
    plan: &BatchPlan,
    window: Option<(i64, i64)>,
) -> Result<Vec<ScoreLine>, ModelError> {
    let scores = score_store(model, store, plan)?;
    let in_window = |ts: i64| window.is_none_or(|(t0, t1)| ts >= t0 && ts < t1);
    let mut out = Vec::new();
    for g in &plan.groups {
        for &i in g {
            let r = &store.records[i];
            for (e, s) in r.events.iter().zip(&scores[i]) {
                if e.scorable && in_window(e.event_ts) {
                    out.push(ScoreLine {
                        event_id: e.event_id,
                        entity_id: r.entity_id.clone(),
                        ts: e.event_ts,
                        score: s.to_f64().unwrap_or(f64::NAN),
                    });
                }
            }
        }
    }
    Ok(out)
}
