//! Deterministic synthetic transaction streams with injected fraud bursts.
//!
//! Legitimate behavior is habitual per card: a home region, a few favourite
//! local merchants, a typical amount scale and an exponential inter-arrival
//! process, a usual channel, with occasional quick same-merchant follow-ups
//! and rare isolated purchases abroad. A fraud card receives one burst of
//! rapid purchases abroad through the channel it does not usually use. Purchases abroad, legitimate or not, copy the merchant of another
//! card's habits, so they match the legitimate marginal field by field. A
//! camouflaged burst also copies that card's amounts; only the victim's own
//! history then tells the burst apart.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{DatasetSchema, Label, NumericField, NumericTransform, RawEvent};

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
}

const MS_PER_SEC: i64 = 1000;
const MS_PER_DAY: i64 = 86_400_000;
const SCORABLE_CHANNELS: [&str; 2] = ["pos", "ecom"];
/// Channel of non-scorable events.
pub const NON_SCORABLE_CHANNEL: &str = "atm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_entities: usize,
    pub period_days: f64,
    /// Epoch ms of the first possible event.
    pub start_ts: i64,
    pub mean_events_per_entity: f64,
    /// Log-scale spread of per-entity event rates.
    pub rate_sigma: f64,
    pub followup_prob: f64,
    pub followup_secs: (f64, f64),
    pub amount_log_mu: f64,
    /// Spread of card amount scales.
    pub amount_sigma_between: f64,
    /// Spread of amounts around a card's own scale.
    pub amount_sigma_within: f64,
    pub n_merchants: usize,
    pub n_mcc: usize,
    pub n_regions: usize,
    pub habit_merchants: usize,
    /// Probability that a legitimate event is a purchase abroad.
    pub travel_prob: f64,
    /// Probability that a domestic legitimate event uses a habitual merchant.
    pub habit_prob: f64,
    /// Probability that a scorable legitimate event uses the card's unusual channel.
    pub channel_switch_prob: f64,
    pub non_scorable_fraction: f64,
    pub fraud_card_fraction: f64,
    /// Target fraud:legit event ratio.
    pub fraud_ratio: f64,
    pub burst_len: usize,
    pub burst_gap_secs: f64,
    pub amount_multiplier: f64,
    /// Fraction of fraud cards whose burst amounts follow the legitimate marginal.
    pub camouflage: f64,
    /// A burst starts at least this long after the period start.
    pub fraud_min_history_days: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_entities: 1000,
            period_days: 120.0,
            start_ts: 1_704_067_200_000, // 2024-01-01T00:00:00Z
            mean_events_per_entity: 100.0,
            rate_sigma: 0.5,
            followup_prob: 0.15,
            followup_secs: (5.0, 30.0),
            amount_log_mu: 3.5,
            amount_sigma_between: 0.7,
            amount_sigma_within: 0.35,
            n_merchants: 1500,
            n_mcc: 30,
            n_regions: 6,
            habit_merchants: 6,
            travel_prob: 0.02,
            habit_prob: 0.85,
            channel_switch_prob: 0.05,
            non_scorable_fraction: 0.1,
            fraud_card_fraction: 0.2,
            fraud_ratio: 1.0 / 200.0,
            burst_len: 5,
            burst_gap_secs: 10.0,
            amount_multiplier: 6.0,
            camouflage: 0.8,
            fraud_min_history_days: 7.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn check(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::InvalidConfig(m.into()));
        let probs = [self.followup_prob, self.travel_prob, self.habit_prob, self.channel_switch_prob, self.non_scorable_fraction, self.fraud_card_fraction, self.camouflage];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.n_entities == 0 || self.n_merchants == 0 || self.n_mcc == 0 || self.n_regions == 0 {
            return bad("entity, merchant, mcc and region counts must be positive");
        }
        if self.n_regions < 2 {
            return bad("at least two regions are needed for purchases abroad");
        }
        if self.habit_merchants == 0 || self.burst_len == 0 {
            return bad("habit_merchants and burst_len must be positive");
        }
        if !(self.period_days > 0.0) || !(self.mean_events_per_entity > 0.0) {
            return bad("period_days and mean_events_per_entity must be positive");
        }
        if !(self.fraud_ratio >= 0.0) || !(self.burst_gap_secs > 0.0) || !(self.amount_multiplier > 0.0) {
            return bad("fraud_ratio, burst_gap_secs and amount_multiplier must be non-negative / positive");
        }
        if self.followup_secs.0 <= 0.0 || self.followup_secs.1 < self.followup_secs.0 {
            return bad("followup_secs must be a positive range");
        }
        let burst_ms = self.burst_gap_secs * 1000.0 * self.burst_len as f64;
        if self.fraud_min_history_days * MS_PER_DAY as f64 + burst_ms >= self.period_days * MS_PER_DAY as f64 {
            return bad("period too short for fraud_min_history_days plus a burst");
        }
        Ok(())
    }

    pub fn end_ts(&self) -> i64 {
        self.start_ts + (self.period_days * MS_PER_DAY as f64) as i64
    }
}

/// The schema every generated event follows.
pub fn synthetic_schema() -> DatasetSchema {
    DatasetSchema {
        entity_field: "card_id".into(),
        timestamp_field: "ts".into(),
        numericals: vec![
            NumericField { name: "amount".into(), transform: NumericTransform::Zscore },
            NumericField { name: "geo_lat".into(), transform: NumericTransform::Percentile },
        ],
        categoricals: vec!["merchant".into(), "mcc".into(), "country".into(), "channel".into()],
        timestamps: vec!["card_issue_ts".into()],
    }
}

struct World {
    merchant_mcc: Vec<usize>,
    merchant_region: Vec<usize>,
    region_lat: Vec<f64>,
    /// Merchants of each region, by popularity.
    by_region: Vec<Vec<usize>>,
}

impl World {
    fn new(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Self {
        let region_lat: Vec<f64> = (0..cfg.n_regions).map(|_| rng.gen_range(-50.0..60.0)).collect();
        let merchant_region: Vec<usize> = (0..cfg.n_merchants).map(|m| m % cfg.n_regions).collect();
        let merchant_mcc: Vec<usize> = (0..cfg.n_merchants).map(|_| rng.gen_range(0..cfg.n_mcc)).collect();
        let mut by_region = vec![Vec::new(); cfg.n_regions];
        for (m, r) in merchant_region.iter().enumerate() {
            by_region[*r].push(m);
        }
        // Every region gets at least one merchant.
        for (r, list) in by_region.iter_mut().enumerate() {
            if list.is_empty() {
                list.push(r % cfg.n_merchants);
            }
        }
        World { merchant_mcc, merchant_region, region_lat, by_region }
    }
}

/// Per-card habits.
#[derive(Clone)]
struct Card {
    id: String,
    home: usize,
    merchants: Vec<usize>,
    merchant_w: WeightedIndex<f64>,
    amount_mu: f64,
    channel: usize,
    issue_ts: i64,
    rate_per_ms: f64,
}

fn make_card(i: usize, cfg: &GenConfig, world: &World, rng: &mut ChaCha8Rng) -> Card {
    let home = rng.gen_range(0..cfg.n_regions);
    let local = &world.by_region[home];
    let pop = WeightedIndex::new((0..local.len()).map(|k| 1.0 / (k as f64 + 1.0))).unwrap();
    let merchants: Vec<usize> = (0..cfg.habit_merchants).map(|_| local[pop.sample(rng)]).collect();
    let merchant_w = WeightedIndex::new((0..merchants.len()).map(|k| 1.0 / (k as f64 + 1.0))).unwrap();
    let amount_mu = Normal::new(cfg.amount_log_mu, cfg.amount_sigma_between).unwrap().sample(rng);
    let rate_scale = LogNormal::new(-cfg.rate_sigma * cfg.rate_sigma / 2.0, cfg.rate_sigma).unwrap().sample(rng);
    let period_ms = cfg.period_days * MS_PER_DAY as f64;
    Card {
        id: format!("card{i:06}"),
        home,
        merchants,
        merchant_w,
        amount_mu,
        channel: rng.gen_range(0..SCORABLE_CHANNELS.len()),
        issue_ts: cfg.start_ts - rng.gen_range(30..1100) * MS_PER_DAY,
        rate_per_ms: cfg.mean_events_per_entity * rate_scale / period_ms,
    }
}

/// Fields of one event before it becomes a [`RawEvent`].
#[derive(Clone)]
struct Draft {
    card: usize,
    ts: i64,
    merchant: usize,
    amount: f64,
    lat: f64,
    channel: &'static str,
    fraud: bool,
}

fn legit_amount(mu: f64, cfg: &GenConfig, rng: &mut ChaCha8Rng) -> f64 {
    let a = LogNormal::new(mu, cfg.amount_sigma_within).unwrap().sample(rng);
    (a * 100.0).round() / 100.0
}

/// A habitual merchant of a random card from another region, with that
/// card's amount scale.
/// Bounded rejection sampling; with no foreign card left to imitate, a
/// uniformly chosen foreign merchant and the card's own amount scale.
fn abroad(home: usize, cards: &[Card], world: &World, rng: &mut ChaCha8Rng) -> (usize, f64) {
    for _ in 0..256 {
        let donor = &cards[rng.gen_range(0..cards.len())];
        if donor.home != home {
            return (donor.merchants[donor.merchant_w.sample(rng)], donor.amount_mu);
        }
    }
    let foreign: Vec<usize> =
        world.by_region.iter().enumerate().filter(|(r, _)| *r != home).flat_map(|(_, ms)| ms.iter().copied()).collect();
    let own = cards.iter().find(|c| c.home == home).map_or(0.0, |c| c.amount_mu);
    match foreign.choose(rng) {
        Some(&m) => (m, own),
        None => (0, own),
    }
}

fn legit_events(ci: usize, cards: &[Card], cfg: &GenConfig, world: &World, rng: &mut ChaCha8Rng) -> Vec<Draft> {
    let card = &cards[ci];
    let local = &world.by_region[card.home];
    let local_w = WeightedIndex::new((0..local.len()).map(|k| 1.0 / (k as f64 + 1.0))).unwrap();
    let gap = Exp::new(card.rate_per_ms).unwrap();
    let end = cfg.end_ts();
    let mut out = Vec::new();
    let mut t = cfg.start_ts as f64 + gap.sample(rng);
    while (t as i64) < end {
        let ts = t as i64;
        let merchant = if rng.gen_bool(cfg.travel_prob) {
            abroad(card.home, cards, world, rng).0
        } else if rng.gen_bool(cfg.habit_prob) {
            card.merchants[card.merchant_w.sample(rng)]
        } else {
            local[local_w.sample(rng)]
        };
        let channel = if rng.gen_bool(cfg.non_scorable_fraction) {
            NON_SCORABLE_CHANNEL
        } else if rng.gen_bool(cfg.channel_switch_prob) {
            SCORABLE_CHANNELS[1 - card.channel]
        } else {
            SCORABLE_CHANNELS[card.channel]
        };
        let lat = world.region_lat[world.merchant_region[merchant]] + rng.gen_range(-0.5..0.5);
        let d = Draft { card: ci, ts, merchant, amount: legit_amount(card.amount_mu, cfg, rng), lat, channel, fraud: false };
        if rng.gen_bool(cfg.followup_prob) {
            let secs = rng.gen_range(cfg.followup_secs.0..=cfg.followup_secs.1);
            let ts2 = ts + (secs * MS_PER_SEC as f64) as i64;
            if ts2 < end {
                let mut f = d.clone();
                f.ts = ts2;
                f.amount = legit_amount(card.amount_mu, cfg, rng);
                out.push(d);
                out.push(f);
            } else {
                out.push(d);
            }
        } else {
            out.push(d);
        }
        t += gap.sample(rng);
    }
    out
}

/// One burst abroad on `card`.
fn burst(ci: usize, cards: &[Card], cfg: &GenConfig, world: &World, rng: &mut ChaCha8Rng) -> Vec<Draft> {
    let burst_ms = (cfg.burst_gap_secs * 1000.0) as i64;
    let lo = cfg.start_ts + (cfg.fraud_min_history_days * MS_PER_DAY as f64) as i64;
    let hi = cfg.end_ts() - burst_ms * cfg.burst_len as i64;
    let start = rng.gen_range(lo..hi);
    let camouflaged = rng.gen_bool(cfg.camouflage);
    let channel = SCORABLE_CHANNELS[1 - cards[ci].channel];
    (0..cfg.burst_len)
        .map(|k| {
            let (merchant, mu) = abroad(cards[ci].home, cards, world, rng);
            let amount = if camouflaged {
                legit_amount(mu, cfg, rng)
            } else {
                (legit_amount(mu, cfg, rng) * cfg.amount_multiplier * 100.0).round() / 100.0
            };
            let lat = world.region_lat[world.merchant_region[merchant]] + rng.gen_range(-0.5..0.5);
            Draft { card: ci, ts: start + k as i64 * burst_ms, merchant, amount, lat, channel, fraud: true }
        })
        .collect()
}

fn entity_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Generates a globally time-ordered stream; ties are ordered by card id.
/// Event ids follow that order starting at 0.
pub fn generate(cfg: &GenConfig) -> Result<Vec<RawEvent>, GenError> {
    cfg.check()?;
    let n = cfg.n_entities as u64;
    let mut world_rng = entity_rng(cfg.seed, 2 * n);
    let world = World::new(cfg, &mut world_rng);
    let cards: Vec<Card> = (0..cfg.n_entities).map(|i| make_card(i, cfg, &world, &mut entity_rng(cfg.seed, i as u64))).collect();
    let mut per_card: Vec<Vec<Draft>> = cards
        .par_iter()
        .enumerate()
        .map(|(i, _)| legit_events(i, &cards, cfg, &world, &mut entity_rng(cfg.seed, n + i as u64)))
        .collect();
    let legit: usize = per_card.iter().map(Vec::len).sum();
    let wanted = (legit as f64 * cfg.fraud_ratio / cfg.burst_len as f64).round() as usize;
    let cap = (cfg.fraud_card_fraction * cfg.n_entities as f64).floor() as usize;
    let n_fraud = wanted.min(cap);
    let mut order: Vec<usize> = (0..cfg.n_entities).collect();
    order.shuffle(&mut world_rng);
    for &ci in &order[..n_fraud] {
        per_card[ci].extend(burst(ci, &cards, cfg, &world, &mut entity_rng(cfg.seed, 3 * n + ci as u64)));
    }
    let mut all: Vec<Draft> = per_card.into_iter().flatten().collect();
    all.sort_by(|a, b| a.ts.cmp(&b.ts).then(a.card.cmp(&b.card)));
    Ok(all
        .into_iter()
        .enumerate()
        .map(|(id, d)| {
            let card = &cards[d.card];
            RawEvent {
                event_id: id as u64,
                entity_id: card.id.clone(),
                event_ts: d.ts,
                numericals: vec![("amount".into(), Some(d.amount)), ("geo_lat".into(), Some((d.lat * 1e4).round() / 1e4))],
                categoricals: vec![
                    ("merchant".into(), Some(format!("m{}", d.merchant))),
                    ("mcc".into(), Some(format!("{}", 5000 + world.merchant_mcc[d.merchant]))),
                    ("country".into(), Some(format!("C{}", world.merchant_region[d.merchant]))),
                    ("channel".into(), Some(d.channel.to_string())),
                ],
                timestamps: vec![("card_issue_ts".into(), Some(card.issue_ts))],
                label: if d.fraud { Label::Fraud } else { Label::Legit },
                scorable: d.channel != NON_SCORABLE_CHANNEL,
            }
        })
        .collect())
}
