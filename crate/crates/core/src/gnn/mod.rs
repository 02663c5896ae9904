//! Message-passing layers, graph construction helpers and time encodings.

mod layers;

use std::rc::Rc;

use thiserror::Error;

use crate::diffcore::{DiffError, Tape, Tensor, Var};

pub use layers::{GcnLayer, Linear, Mlp, PnaLayer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GnnError {
    #[error("graph has no nodes")]
    ZeroNodes,
    #[error("{layer}: expected input width {expected}, got {found}")]
    WidthMismatch {
        layer: String,
        expected: usize,
        found: usize,
    },
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("time step {t} outside [0, {total}]")]
    OutOfRange { t: f64, total: f64 },
    #[error("edge ({0}, {1}) outside a graph of {2} nodes")]
    BadEdge(usize, usize, usize),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Directed `(src, dst)` pairs over `n` nodes. Messages flow from `src` to
/// `dst`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeIndex {
    n: usize,
    pairs: Vec<(usize, usize)>,
    complete_with_loops: bool,
    src: Rc<[usize]>,
    dst: Rc<[usize]>,
}

impl EdgeIndex {
    pub fn new(n: usize, pairs: Vec<(usize, usize)>) -> Result<Self, GnnError> {
        if n == 0 {
            return Err(GnnError::ZeroNodes);
        }
        if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= n || b >= n) {
            return Err(GnnError::BadEdge(a, b, n));
        }
        let complete_with_loops = pairs.len() == n * n && {
            let mut seen = vec![false; n * n];
            pairs.iter().for_each(|&(a, b)| seen[a * n + b] = true);
            seen.iter().all(|&s| s)
        };
        let src: Rc<[usize]> = pairs.iter().map(|p| p.0).collect();
        let dst: Rc<[usize]> = pairs.iter().map(|p| p.1).collect();
        Ok(Self {
            n,
            pairs,
            complete_with_loops,
            src,
            dst,
        })
    }

    /// Both directions of every undirected edge.
    pub fn undirected(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GnnError> {
        let pairs = edges.into_iter().flat_map(|(a, b)| [(a, b), (b, a)]).collect();
        Self::new(n, pairs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub(crate) fn src(&self) -> Rc<[usize]> {
        self.src.clone()
    }

    pub(crate) fn dst(&self) -> Rc<[usize]> {
        self.dst.clone()
    }

    pub(crate) fn is_complete_with_loops(&self) -> bool {
        self.complete_with_loops
    }
}

/// All ordered pairs `src != dst`, plus `(k, k)` for every node if asked.
pub fn complete_graph_edges(n: usize, self_loops: bool) -> Result<EdgeIndex, GnnError> {
    if n == 0 {
        return Err(GnnError::ZeroNodes);
    }
    let pairs = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| self_loops || i != j)
        .collect();
    EdgeIndex::new(n, pairs)
}

/// Unordered pairs `i < j` in row-major order.
pub fn unordered_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairDistance {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    pub squared: f64,
}

/// Euclidean distance between the rows of `cloud` for every unordered pair.
pub fn egnn_distance_features(cloud: &Tensor) -> Result<Vec<PairDistance>, GnnError> {
    let n = cloud.rows();
    if cloud.rank() != 2 || n < 2 {
        return Err(GnnError::TooFewPoints(if cloud.rank() == 2 { n } else { 0 }));
    }
    Ok(unordered_pairs(n)
        .into_iter()
        .map(|(i, j)| {
            let squared: f64 = cloud.row(i).iter().zip(cloud.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            PairDistance {
                i,
                j,
                distance: squared.sqrt(),
                squared,
            }
        })
        .collect())
}

/// Differentiable `m × 1` squared distances between rows `pairs[k].0` and
/// `pairs[k].1` of `x`.
pub fn pair_sq_distances(tape: &mut Tape, x: Var, pairs: &[(usize, usize)]) -> Result<Var, GnnError> {
    let a: Rc<[usize]> = pairs.iter().map(|p| p.0).collect();
    let b: Rc<[usize]> = pairs.iter().map(|p| p.1).collect();
    let xa = tape.gather_rows(x, a)?;
    let xb = tape.gather_rows(x, b)?;
    let diff = tape.sub(xa, xb)?;
    let sq = tape.square(diff);
    Ok(tape.row_sum(sq))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeEncoding {
    /// `h = t / T`.
    Normalized,
    /// `(sin ω_k s, cos ω_k s)` for `ω_k = π 2^k`, `s = t / T`.
    Sinusoidal { pairs: usize },
}

impl TimeEncoding {
    pub fn width(self) -> usize {
        match self {
            TimeEncoding::Normalized => 1,
            TimeEncoding::Sinusoidal { pairs } => 2 * pairs,
        }
    }
}

pub fn time_encode(t: f64, total: f64, enc: TimeEncoding) -> Result<Vec<f64>, GnnError> {
    if !(0.0..=total).contains(&t) || total <= 0.0 {
        return Err(GnnError::OutOfRange { t, total });
    }
    let s = t / total;
    Ok(match enc {
        TimeEncoding::Normalized => vec![s],
        TimeEncoding::Sinusoidal { pairs } => (0..pairs)
            .flat_map(|k| {
                let w = std::f64::consts::PI * 2f64.powi(k as i32);
                [(w * s).sin(), (w * s).cos()]
            })
            .collect(),
    })
}

/// `n × width` matrix with the time encoding repeated on every row.
pub fn time_columns(n: usize, t: f64, total: f64, enc: TimeEncoding) -> Result<Tensor, GnnError> {
    let row = time_encode(t, total, enc)?;
    let w = row.len();
    Ok(Tensor::matrix(n, w, row.repeat(n)))
}
