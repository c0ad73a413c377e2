//! Adaptive graph contrastive learning for recommendation.
//!
//! A LightGCN-style encoder is trained with BPR plus an InfoNCE term between
//! two learned views of the interaction graph: one resampled by a variational
//! graph autoencoder, one produced by a per-layer edge-gating denoiser. The
//! generators are optimised on their own objectives in alternation with the
//! main model.
//!
//! ```no_run
//! use adagcl::data::{load_interactions, split, Format, SplitMode};
//! use adagcl::trainer::{fit, TrainConfig};
//!
//! let table = load_interactions("user_artists.dat".as_ref(), Format::Lastfm)?;
//! let splits = split(&table, [0.7, 0.2, 0.1], 42, SplitMode::PerUser)?;
//! let (state, history) = fit(&TrainConfig::default(), &splits)?;
//! println!("best validation recall@20 {:.4}", history.best_metric);
//! # let _ = state;
//! # Ok::<(), adagcl::Error>(())
//! ```

pub mod baselines;
pub mod data;
pub mod diffmath;
pub mod encoder;
pub mod eval;
pub mod objectives;
pub mod trainer;
pub mod viewgen;

pub use data::{DataError, InteractionGraph, InteractionTable, SplitSet};
pub use diffmath::{DiffError, Tape, Tensor, Var};
pub use encoder::{EmbeddingState, Embeddings, LightGcn, Propagation};
pub use eval::{evaluate, EvalMode, EvalReport};
pub use objectives::{ContrastiveConfig, TripletBatch};
pub use trainer::{fit, History, TrainConfig, TrainState, Variant};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("no user has relevant items in the evaluated split")]
    NoEvaluableUsers,
    #[error("relevant item set is empty")]
    EmptyRelevant,
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFinite {
        epoch: usize,
        step: u64,
        detail: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_error(path: &std::path::Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}
