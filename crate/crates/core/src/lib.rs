//! Fraud scoring over interleaved per-entity event sequences with a stacked
//! GRU, covering preprocessing, training, batch scoring and streaming
//! inference with persisted recurrent state.

pub mod batch_infer;
mod error;
pub mod metrics;
pub mod model;
pub mod prep;
pub mod schema;
pub mod seq;
pub mod state;
pub mod stream;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use model::{EntityState, Model, ModelConfig, ModelParams, Precision};
pub use prep::{FeatureVector, FittedPipeline};
pub use schema::{DatasetSchema, Label, RawEvent};
pub use seq::{SequenceRecord, SequenceStore};
pub use state::StateStore;
pub use stream::{StreamEngine, StreamingContext};
