//! Numeric substrate: tensors, reverse-mode tape, Adam, orthonormal DCT and a
//! fixed-step RK4 integrator.

mod adam;
mod checkpoint;
mod dct;
mod gradcheck;
mod ode;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, DEFAULT_LR};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointEntry, MAGIC};
pub use dct::{dct_orthonormal, idct_orthonormal};
pub use gradcheck::{check_gradients, GradCheck};
pub use ode::ode_integrate;
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, SegmentReduce, Tape, Var};
pub(crate) use tape::softmax_rows;
pub use tensor::Tensor;



use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index out of range in {op} (length {len})")]
    IndexOutOfRange { op: &'static str, len: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    LossNotScalar(Vec<usize>),
    #[error("loss was not produced by this tape")]
    DetachedLoss,
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("vector field is not finite at t = {t}")]
    NonFiniteField { t: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint is missing parameter {0}")]
    MissingParameter(String),
    #[error("io: {0}")]
    Io(String),
}
