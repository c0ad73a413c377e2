//! Reverse-mode differentiation, sparse products and the optimiser used by
//! every model in the crate.

mod adam;
mod checkpoint;
mod gradcheck;
mod mlp;
mod sparse;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, GradCheckReport};
pub use mlp::{bind, Activation, Bound, Mlp};
pub use sparse::SparseMatrix;
pub use tape::{Tape, Var};
pub use tensor::{ParamId, Params, Tensor};

pub(crate) use tape::sigmoid;
pub(crate) use tensor::dot;

#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("backward root must be scalar, got {0}x{1}")]
    NonScalarRoot(usize, usize),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
