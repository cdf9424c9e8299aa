use thiserror::Error;

use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::prep::PrepError;
use crate::schema::SchemaError;
use crate::seq::SeqError;
use crate::state::StoreError;
use crate::stream::StreamError;
use crate::synth::GenError;
use crate::train::TrainError;

/// Crate-wide error, one variant per subsystem.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
