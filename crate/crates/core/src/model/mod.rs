//! Stacked-GRU model: embeddings and an input dense layer (feature block),
//! GRU layers (recurrent block), and a dense classifier over the top GRU
//! output concatenated with x′ (skip connection). Forward and backward passes
//! are written out by hand.

mod backward;
mod forward;
mod io;
mod linalg;
mod params;
mod real;

use thiserror::Error;

pub use forward::{classifier_block, feature_block, gru_step, EntityState, GruTrace, SequenceForward, StepTrace};
pub use io::{read_model_config, MODEL_FILE_VERSION};
pub use linalg::Matrix;
pub use params::{DenseLayer, GruLayer, ModelConfig, ModelHyper, ModelParams, TensorRef};
pub use real::{sigmoid, Precision, Real};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("categorical feature {feature}: index {index} out of range (cardinality {cardinality})")]
    IndexOutOfRange { feature: usize, index: u32, cardinality: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no scorable event to compute a loss over")]
    EmptyScorableSet,
    #[error("corrupt model file: {0}")]
    CorruptModelFile(String),
    #[error("model stored as {stored:?} but loaded as {requested:?}")]
    PrecisionMismatch { stored: Precision, requested: Precision },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    pub config: ModelConfig,
    pub params: ModelParams<F>,
}

impl<F: Real> Model<F> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.check()?;
        let params = ModelParams::init(&config, seed);
        Ok(Model { config, params })
    }

    /// Wraps existing parameters after checking they fit `config`.
    pub fn from_parts(config: ModelConfig, params: ModelParams<F>) -> Result<Self, ModelError> {
        config.check()?;
        let want = ModelParams::<F>::zeros(&config);
        let same = want.tensors().iter().zip(params.tensors().iter()).all(|(a, b)| a.0 == b.0 && a.1 == b.1)
            && want.tensors().len() == params.tensors().len();
        if !same {
            return Err(ModelError::ShapeMismatch("parameters do not fit the config".into()));
        }
        Ok(Model { config, params })
    }
}
