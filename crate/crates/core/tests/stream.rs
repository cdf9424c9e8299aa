mod common;

use std::sync::Arc;
use std::time::Instant;

use common::world::{batch_scores, context, quiet_store, stream_outputs, stream_scores, world, World};
use interseq::model::EntityState;
use interseq::prep::PrepError;
use interseq::state::{decode_state, StoreConfig};
use interseq::stream::{run_bench, BenchConfig, StreamConfig, StreamEngine, StreamError, READ_LABEL, TOTAL_LABEL, WRITE_LABEL};
use interseq::{RawEvent, StateStore};

fn cfg(lanes: usize) -> StreamConfig {
    StreamConfig { lanes, cache_capacity: 64, ..Default::default() }
}

fn first_event_score(w: &World<f64>, e: &RawEvent) -> f64 {
    let gap = w.pipeline.gap_secs(None, e.event_ts).unwrap();
    let fv = w.pipeline.apply_event(e, gap).unwrap();
    let mut s = w.model.zero_state();
    w.model.step(&fv, &mut s, &mut w.model.new_trace()).unwrap()
}

#[test]
fn streaming_equals_batch_exactly_in_f64() {
    let w = world::<f64>(20, 600, 0.3, 1);
    let d = tempfile::tempdir().unwrap();
    let ctx = context(&w, quiet_store(&d.path().join("s.log")), cfg(3));
    let got = stream_scores(&ctx, &w.events);
    let want = batch_scores(&w);
    assert_eq!(got.len(), w.events.len());
    for (id, y) in &want {
        assert_eq!(got[id].to_bits(), y.to_bits(), "event {id}");
    }
}

#[test]
fn streaming_matches_batch_in_f32() {
    let w = world::<f32>(20, 600, 0.3, 2);
    let d = tempfile::tempdir().unwrap();
    let ctx = context(&w, quiet_store(&d.path().join("s.log")), cfg(2));
    let got = stream_scores(&ctx, &w.events);
    for (id, y) in batch_scores(&w) {
        assert!((got[&id] - y).abs() <= 1e-5 * y.abs(), "event {id}: {} vs {y}", got[&id]);
    }
}

#[test]
fn first_event_starts_from_zero_state() {
    let w = world::<f64>(5, 50, 0.0, 3);
    let d = tempfile::tempdir().unwrap();
    let ctx = context(&w, quiet_store(&d.path().join("s.log")), cfg(1));
    let e = &w.events[0];
    let got = ctx.score_event(&mut ctx.new_scratch(), e).unwrap();
    assert_eq!(got.score, first_event_score(&w, e));
}

#[test]
fn threshold_tie_blocks_and_non_scorable_has_no_decision() {
    let w = world::<f64>(5, 50, 0.5, 4);
    let scorable = w.events.iter().find(|e| e.scorable).unwrap().clone();
    let exact = first_event_score(&w, &scorable);
    let d = tempfile::tempdir().unwrap();
    let ctx = context(&w, quiet_store(&d.path().join("s.log")), StreamConfig { threshold: exact, ..cfg(1) });
    assert_eq!(ctx.score_event(&mut ctx.new_scratch(), &scorable).unwrap().block, Some(true));
    let other = w.events.iter().find(|e| !e.scorable && e.entity_id != scorable.entity_id).unwrap();
    assert_eq!(ctx.score_event(&mut ctx.new_scratch(), other).unwrap().block, None);
}

#[test]
fn out_of_order_event_is_rejected_without_touching_state() {
    let w = world::<f64>(3, 30, 0.0, 5);
    let d = tempfile::tempdir().unwrap();
    let ctx = context(&w, quiet_store(&d.path().join("s.log")), cfg(1));
    let card = &w.events[0].entity_id;
    let mine: Vec<_> = w.events.iter().filter(|e| &e.entity_id == card).take(2).cloned().collect();
    let mut scratch = ctx.new_scratch();
    ctx.score_event(&mut scratch, &mine[1]).unwrap();
    let before = ctx.fetch_state(card.as_bytes()).unwrap();
    let err = ctx.score_event(&mut scratch, &mine[0]).unwrap_err();
    assert!(matches!(err, StreamError::Prep(PrepError::UnsortedSequence { .. })));
    assert_eq!(ctx.fetch_state(card.as_bytes()).unwrap(), before);
}

#[test]
fn flush_writer_reports_and_store_keeps_last_version() {
    let w = world::<f64>(1, 40, 0.0, 6);
    let d = tempfile::tempdir().unwrap();
    let store = quiet_store(&d.path().join("s.log"));
    let ctx = context(&w, Arc::clone(&store), cfg(1));
    assert_eq!(ctx.flush_writer(None).unwrap(), 0);
    let mut scratch = ctx.new_scratch();
    for e in &w.events {
        ctx.score_event(&mut scratch, e).unwrap();
    }
    assert_eq!(ctx.flush_writer(None).unwrap(), w.events.len());
    let key = w.events[0].entity_id.as_bytes();
    let stored: EntityState<f64> =
        decode_state(&store.get(key).unwrap().unwrap(), w.model.config.schema_hash, &w.model.config.gru_widths).unwrap();
    assert_eq!(stored, ctx.fetch_state(key).unwrap());
    assert_eq!(stored.last_event_ts, Some(w.events.last().unwrap().event_ts));
}

#[test]
fn tiny_cache_with_slow_writes_loses_nothing() {
    let w = world::<f64>(12, 60, 0.2, 7);
    let d = tempfile::tempdir().unwrap();
    let reference = context(&w, quiet_store(&d.path().join("a.log")), cfg(2));
    let want = stream_scores(&reference, &w.events);
    let slow = StreamConfig { cache_capacity: 3, persist_delay_ms: 5, queue_capacity: 4, ..cfg(2) };
    let ctx = context(&w, quiet_store(&d.path().join("b.log")), slow);
    let got = stream_scores(&ctx, &w.events);
    assert_eq!(got, want);
    assert!(ctx.cache_evictions() > 0);
}

#[test]
fn idle_card_expires_and_restarts_from_zero() {
    let w = world::<f64>(4, 80, 0.0, 8);
    let d = tempfile::tempdir().unwrap();
    let ctx = context(&w, quiet_store(&d.path().join("s.log")), cfg(1));
    let card = w.events[0].entity_id.clone();
    let mine: Vec<_> = w.events.iter().filter(|e| e.entity_id == card).cloned().collect();
    let mut scratch = ctx.new_scratch();
    for e in &mine[..mine.len() - 1] {
        ctx.score_event(&mut scratch, e).unwrap();
    }
    let last = mine.last().unwrap();
    let ttl = ctx.store().config().ttl_ms;
    assert_eq!(ctx.expiry_tick(mine[0].event_ts).unwrap(), 0);
    assert!(ctx.expiry_tick(last.event_ts + ttl).unwrap() >= 1);
    assert!(ctx.store().get(card.as_bytes()).unwrap().is_none());
    let mut later = last.clone();
    later.event_ts += ttl;
    let fresh = first_event_score(&w, &later);
    assert_eq!(ctx.score_event(&mut scratch, &later).unwrap().score, fresh);
}

#[test]
fn replay_from_watermark_reconverges_after_crash() {
    let w = world::<f64>(10, 300, 0.1, 9);
    let d = tempfile::tempdir().unwrap();
    let split = w.events.len() / 2;
    let full = context(&w, quiet_store(&d.path().join("full.log")), cfg(2));
    let want = stream_scores(&full, &w.events);

    let log = d.path().join("crash.log");
    let crashed = context(&w, quiet_store(&log), cfg(2));
    let mut engine = StreamEngine::new(Arc::clone(&crashed), None).unwrap();
    for e in &w.events[..split] {
        engine.submit(e.clone()).unwrap();
    }
    engine.checkpoint().unwrap();
    // The disk as it stood at the checkpoint; later updates are lost.
    let image = d.path().join("image.log");
    std::fs::copy(&log, &image).unwrap();
    for e in &w.events[split..split + 20] {
        engine.submit(e.clone()).unwrap();
    }
    drop(engine);

    let store = Arc::new(StateStore::open(&image, StoreConfig { sync: false, ..Default::default() }).unwrap());
    let from = store.watermark().unwrap() as usize;
    assert_eq!(from, split);
    let restarted = context(&w, store, cfg(2));
    let got = stream_outputs(&restarted, &w.events[from..]);
    for e in &w.events[from..] {
        assert_eq!(got[&e.event_id].result.as_ref().unwrap().score, want[&e.event_id]);
    }
}

#[test]
fn scoring_cost_does_not_grow_with_history() {
    let w = world::<f32>(1, 10, 0.0, 10);
    let d = tempfile::tempdir().unwrap();
    let ctx = context(&w, quiet_store(&d.path().join("s.log")), cfg(1));
    let template = w.events[0].clone();
    let mut scratch = ctx.new_scratch();
    // Event 0 pays for the store miss, so early cost is sampled after it.
    let (mut early, mut late) = (Vec::new(), Vec::new());
    for card in 0..30 {
        for i in 0..1000 {
            let mut e = template.clone();
            e.entity_id = format!("long{card}");
            e.event_ts += i * 60_000;
            let t = Instant::now();
            ctx.score_event(&mut scratch, &e).unwrap();
            let dt = t.elapsed();
            match i {
                10..=19 => early.push(dt),
                990..=999 => late.push(dt),
                _ => {}
            }
        }
    }
    early.sort();
    late.sort();
    let (a, b) = (early[early.len() / 2], late[late.len() / 2]);
    assert!(b <= a * 2, "median early {a:?} vs late {b:?}");
}

#[test]
fn bench_reports_all_probes_and_catches_overload() {
    let w = world::<f32>(30, 600, 0.1, 11);
    let d = tempfile::tempdir().unwrap();
    let ctx = context(&w, quiet_store(&d.path().join("s.log")), cfg(1));
    let mut engine = StreamEngine::new(Arc::clone(&ctx), None).unwrap();

    let none = run_bench(&mut engine, w.events.clone(), &BenchConfig { duration_secs: 0.0, ..Default::default() }).unwrap();
    assert_eq!(none.events, 0);
    assert!(none.rows.iter().all(|(_, s)| s.is_none()));

    let r = run_bench(&mut engine, w.events[..200].to_vec(), &BenchConfig { rate: 200.0, duration_secs: 1.0, max_lag_ms: 2000 })
        .unwrap();
    assert_eq!(r.events, 200);
    for label in [WRITE_LABEL, READ_LABEL, TOTAL_LABEL] {
        assert_eq!(r.row(label).unwrap().count, 200, "{label}");
    }
    assert_eq!(r.table().lines().count(), 4);

    let later: Vec<RawEvent> = w
        .events
        .iter()
        .map(|e| RawEvent { event_ts: e.event_ts + 40 * 86_400_000, ..e.clone() })
        .cycle()
        .take(200_000)
        .enumerate()
        .map(|(i, mut e)| {
            e.entity_id = format!("x{i}");
            e
        })
        .collect();
    let err = run_bench(&mut engine, later, &BenchConfig { rate: 1e7, duration_secs: 0.02, max_lag_ms: 1 }).unwrap_err();
    assert!(matches!(err, StreamError::RateUnsustainable { .. }));
}
