//! Shared fixtures for the benchmarks.

use interseq::model::{ModelConfig, ModelHyper, Precision, Real};
use interseq::prep::{fit_pipeline, PipelineConfig};
use interseq::seq::build_sequences;
use interseq::synth::{generate, synthetic_schema, GenConfig};
use interseq::{FittedPipeline, Model, RawEvent, SequenceStore};

/// A synthetic stream with its fitted pipeline, sequences and an untrained model.
pub struct Fixture<F> {
    pub events: Vec<RawEvent>,
    pub pipeline: FittedPipeline,
    pub store: SequenceStore,
    pub model: Model<F>,
}

/// Architecture used throughout the benches: GRU [32, 16], classifier [32].
pub fn hyper(precision: Precision) -> ModelHyper {
    ModelHyper { embed_dim: 8, input_width: 32, gru_widths: vec![32, 16], classifier_widths: vec![32], precision }
}

pub fn fixture<F: Real>(n_entities: usize, days: f64, seed: u64) -> Fixture<F> {
    let cfg = GenConfig { n_entities, period_days: days, seed, ..Default::default() };
    let events = generate(&cfg).expect("generator config is valid");
    let pipeline = fit_pipeline(&events, &synthetic_schema(), PipelineConfig::default()).expect("fit");
    let store = build_sequences(events.clone(), &pipeline).expect("sequences");
    let mc = ModelConfig::from_layout(&pipeline.layout(), &hyper(F::PRECISION), pipeline.schema_hash);
    let model = Model::init(mc, seed).expect("model");
    Fixture { events, pipeline, store, model }
}
