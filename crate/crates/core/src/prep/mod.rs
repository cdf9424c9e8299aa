//! Non-learnable feature transforms: fitted once on the training period,
//! then applied identically offline and in streaming.

mod categorical;
mod numeric;
mod pipeline;
mod time;

use thiserror::Error;

pub use categorical::{fit_categorical, CategoricalIndexer, DEFAULT_EMBEDDING_CAP, DEFAULT_MIN_OCCURRENCES};
pub use numeric::{
    fit_percentile, fit_zscore, nearest_rank_index, PercentileBucketer, ZScoreTransform,
    MISSING_BUCKET, N_PERCENTILES, PERCENTILE_CARDINALITY,
};
pub use pipeline::{
    fit_pipeline, FeatureLayout, FittedPipeline, NumericFit, PipelineConfig, PIPELINE_FORMAT,
    PIPELINE_VERSION,
};
pub use time::{
    delta_t_secs, entity_delta_t, time_cyclical, timestamp_deltas, DEFAULT_DELTA_T_IMPUTE_SECS,
    MS_PER_DAY,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrepError {
    #[error("field `{field}` has zero variance in the training data")]
    DegenerateDistribution { field: String },
    #[error("field `{field}` has too few finite training values ({got})")]
    TooFewValues { field: String, got: usize },
    #[error("timestamps out of order: {ts} after {prev_ts}")]
    UnsortedSequence { prev_ts: i64, ts: i64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("event does not match the pipeline schema: {0}")]
    SchemaMismatch(String),
    #[error("pipeline file: {0}")]
    Format(String),
}

impl PrepError {
    fn for_field(self, name: &str) -> Self {
        match self {
            PrepError::DegenerateDistribution { .. } => {
                PrepError::DegenerateDistribution { field: name.to_string() }
            }
            PrepError::TooFewValues { got, .. } => PrepError::TooFewValues { field: name.to_string(), got },
            other => other,
        }
    }
}

/// Transformed event: dense slots for the model's input layer and indices
/// for its embedding tables.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeatureVector {
    /// Z-scored numericals, the six cyclical time features, z-scored
    /// timestamp differences, then the z-scored entity gap.
    pub dense: Vec<f64>,
    /// Indexed categoricals followed by percentile-bucketed numericals.
    pub cat: Vec<u32>,
}
