//! Autoencoders between molecular graphs and latent point clouds, plus the
//! bond-type predictor and the edges-as-nodes construction.

mod autoencoder;
mod edge_types;
mod input_space;
mod overfit;

use thiserror::Error;

use crate::chem::{Element, GraphError};
use crate::diffcore::{DiffError, Tensor};
use crate::gnn::GnnError;

pub use autoencoder::{
    decode_egnn, decode_gnn, encode, reconstruction_loss, AtomTypeAutoencoder, DecoderKind, GraphAutoencoder,
    Reconstruction, EDGE_THRESHOLD, HIDDEN,
};
pub use edge_types::{predict_edge_types, EdgeTypeModel, TypedPrediction};
pub use input_space::{build_edges_as_nodes, extended_edges, EdgesAsNodesGraph, InputSpaceAutoencoder, AUX_FEATURES};
pub use overfit::{overfit_one, reconstructs_exactly, OverfitOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("latent cloud is {found:?}, expected {expected} columns with finite entries")]
    BadCloud { expected: usize, found: Vec<usize> },
    #[error("model expects a {expected} decoder")]
    WrongDecoder { expected: &'static str },
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Per-atom latent points: graph-encoder columns `[0, z)` followed by the two
/// atom-type columns.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCloud {
    z: usize,
    points: Tensor,
}

impl LatentCloud {
    pub fn new(points: Tensor, z: usize) -> Result<Self, CodecError> {
        if points.rank() != 2 || points.cols() != z + 2 || points.rows() == 0 || !points.all_finite() {
            return Err(CodecError::BadCloud {
                expected: z + 2,
                found: points.shape().to_vec(),
            });
        }
        Ok(Self { z, points })
    }

    pub fn n(&self) -> usize {
        self.points.rows()
    }

    pub fn z(&self) -> usize {
        self.z
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn into_points(self) -> Tensor {
        self.points
    }
}

/// Decoder output before bond typing: atoms plus an undirected edge set
/// (`i < j`, sorted).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UntypedGraph {
    pub atoms: Vec<Element>,
    pub edges: Vec<(usize, usize)>,
}
