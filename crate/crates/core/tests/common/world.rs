//! A small synthetic deployment: events, fitted pipeline, model, and a
//! batch-inference oracle for per-event scores.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use interseq::batch_infer::{plan_store, score_store, DEFAULT_EVENT_BUDGET};
use interseq::model::{ModelConfig, ModelHyper, Real};
use interseq::prep::{fit_pipeline, PipelineConfig};
use interseq::seq::{build_sequences, sort_by_length_desc};
use interseq::state::{StateStore, StoreConfig};
use interseq::stream::{StreamConfig, StreamEngine, StreamOutput};
use interseq::synth::{generate, synthetic_schema, GenConfig};
use interseq::{FittedPipeline, Model, RawEvent, StreamingContext};

pub struct World<F: Real> {
    pub events: Vec<RawEvent>,
    pub pipeline: FittedPipeline,
    pub model: Model<F>,
}

pub fn gen_config(n_entities: usize, n_events: usize, non_scorable: f64, seed: u64) -> GenConfig {
    GenConfig {
        n_entities,
        period_days: 30.0,
        mean_events_per_entity: n_events as f64 / n_entities as f64,
        non_scorable_fraction: non_scorable,
        fraud_ratio: 0.02,
        seed,
        ..Default::default()
    }
}

pub fn world<F: Real>(n_entities: usize, n_events: usize, non_scorable: f64, seed: u64) -> World<F> {
    let events = generate(&gen_config(n_entities, n_events, non_scorable, seed)).unwrap();
    let pipeline = fit_pipeline(&events, &synthetic_schema(), PipelineConfig::default()).unwrap();
    let hyper = ModelHyper {
        embed_dim: 3,
        input_width: 8,
        gru_widths: vec![6, 5],
        classifier_widths: vec![7],
        precision: F::PRECISION,
    };
    let cfg = ModelConfig::from_layout(&pipeline.layout(), &hyper, pipeline.schema_hash);
    let model = Model::<F>::init(cfg, seed).unwrap();
    World { events, pipeline, model }
}

/// Per-event scores from batch inference, keyed by event id.
pub fn batch_scores<F: Real>(w: &World<F>) -> HashMap<u64, f64> {
    let store = sort_by_length_desc(build_sequences(w.events.clone(), &w.pipeline).unwrap());
    let plan = plan_store(&store, DEFAULT_EVENT_BUDGET);
    let scores = score_store(&w.model, &store, &plan).unwrap();
    let mut out = HashMap::new();
    for (r, s) in store.records.iter().zip(scores) {
        for (e, y) in r.events.iter().zip(s) {
            out.insert(e.event_id, y.to_f64().unwrap());
        }
    }
    out
}

pub fn quiet_store(path: &Path) -> Arc<StateStore> {
    Arc::new(StateStore::open(path, StoreConfig { sync: false, ..Default::default() }).unwrap())
}

pub fn context<F: Real>(w: &World<F>, store: Arc<StateStore>, cfg: StreamConfig) -> Arc<StreamingContext<F>> {
    Arc::new(StreamingContext::new(w.pipeline.clone(), w.model.clone(), store, cfg).unwrap())
}

/// Streams `events` through lanes and returns every outcome by event id.
pub fn stream_outputs<F: Real>(ctx: &Arc<StreamingContext<F>>, events: &[RawEvent]) -> HashMap<u64, StreamOutput> {
    let (tx, rx) = crossbeam_channel::unbounded();
    let mut engine = StreamEngine::new(Arc::clone(ctx), Some(tx)).unwrap();
    for e in events {
        engine.submit(e.clone()).unwrap();
    }
    engine.finish().unwrap();
    rx.try_iter().map(|o| (o.event_id, o)).collect()
}

pub fn stream_scores<F: Real>(ctx: &Arc<StreamingContext<F>>, events: &[RawEvent]) -> HashMap<u64, f64> {
    stream_outputs(ctx, events).into_iter().map(|(id, o)| (id, o.result.unwrap().score)).collect()
}
