use rand::Rng;

use super::{CodecError, UntypedGraph, EDGE_THRESHOLD};
use crate::chem::{Element, MolGraph};
use crate::diffcore::{ParamStore, Tape, Tensor, Var};
use crate::gnn::{unordered_pairs, EdgeIndex, GcnLayer};

/// Feature width of the extended graph:
/// `[aux, C, N, O, F, present, single, double, triple, aromatic]`.
pub const AUX_FEATURES: usize = 10;
const WIDTH: usize = 32;
const PRESENT: usize = 5;

/// Original atoms followed by one auxiliary node per unordered atom pair.
/// Each auxiliary node is linked to its two atoms.
#[derive(Clone, Debug)]
pub struct EdgesAsNodesGraph {
    pub n: usize,
    pub pairs: Vec<(usize, usize)>,
    pub features: Tensor,
    pub edges: EdgeIndex,
}

impl EdgesAsNodesGraph {
    pub fn node_count(&self) -> usize {
        self.n + self.pairs.len()
    }
}

/// Edge index of the extended graph for `n` atoms.
pub fn extended_edges(n: usize) -> Result<EdgeIndex, CodecError> {
    let pairs = unordered_pairs(n);
    let total = n + pairs.len();
    Ok(EdgeIndex::undirected(
        total,
        pairs.iter().enumerate().flat_map(|(k, &(i, j))| [(n + k, i), (n + k, j)]),
    )?)
}

pub fn build_edges_as_nodes(m: &MolGraph) -> Result<EdgesAsNodesGraph, CodecError> {
    let n = m.n();
    if n < 2 {
        return Err(CodecError::TooFewPoints(n));
    }
    let pairs = unordered_pairs(n);
    let mut features = Tensor::zeros(&[n + pairs.len(), AUX_FEATURES]);
    for (k, a) in m.atoms().iter().enumerate() {
        features.set(k, 1 + a.index(), 1.0);
    }
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let row = n + k;
        features.set(row, 0, 1.0);
        if let Some(t) = m.bond_between(i, j) {
            features.set(row, PRESENT, 1.0);
            features.set(row, PRESENT + 1 + t.index(), 1.0);
        }
    }
    Ok(EdgesAsNodesGraph {
        n,
        edges: extended_edges(n)?,
        pairs,
        features,
    })
}

/// Four root-weighted graph convolutions each way between the extended
/// graph's features and `z` columns per node.
#[derive(Clone, Debug)]
pub struct InputSpaceAutoencoder {
    pub store: ParamStore,
    z: usize,
    enc: Vec<GcnLayer>,
    dec: Vec<GcnLayer>,
}

impl InputSpaceAutoencoder {
    pub fn new(z: usize, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let dims_enc = [AUX_FEATURES, WIDTH, WIDTH, WIDTH, z];
        let dims_dec = [z, WIDTH, WIDTH, WIDTH, AUX_FEATURES];
        let enc = dims_enc
            .windows(2)
            .enumerate()
            .map(|(k, w)| GcnLayer::with_root(&mut store, &format!("ia.enc{k}"), w[0], w[1], rng))
            .collect();
        let dec = dims_dec
            .windows(2)
            .enumerate()
            .map(|(k, w)| GcnLayer::with_root(&mut store, &format!("ia.dec{k}"), w[0], w[1], rng))
            .collect();
        Self { store, z, enc, dec }
    }

    pub fn z(&self) -> usize {
        self.z
    }

    fn stack(&self, layers: &[GcnLayer], tape: &mut Tape, mut x: Var, e: &EdgeIndex) -> Result<Var, CodecError> {
        for (k, l) in layers.iter().enumerate() {
            x = l.forward(tape, &self.store, x, e)?;
            if k + 1 < layers.len() {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    pub fn encode_var(&self, tape: &mut Tape, g: &EdgesAsNodesGraph) -> Result<Var, CodecError> {
        let x = tape.leaf(g.features.clone());
        self.stack(&self.enc, tape, x, &g.edges)
    }

    /// Reconstructed features, regressed directly onto the 0/1 targets.
    pub fn decode_var(&self, tape: &mut Tape, emb: Var, e: &EdgeIndex) -> Result<Var, CodecError> {
        self.stack(&self.dec, tape, emb, e)
    }

    /// MSE between reconstructed and true features; also returns the
    /// embedding.
    pub fn loss(&self, tape: &mut Tape, g: &EdgesAsNodesGraph) -> Result<(Var, Var), CodecError> {
        let emb = self.encode_var(tape, g)?;
        let rec = self.decode_var(tape, emb, &g.edges)?;
        let target = tape.leaf(g.features.clone());
        Ok((tape.mse(rec, target)?, emb))
    }

    pub fn encode(&self, m: &MolGraph) -> Result<Tensor, CodecError> {
        let g = build_edges_as_nodes(m)?;
        let mut tape = Tape::new();
        let e = self.encode_var(&mut tape, &g)?;
        Ok(tape.value(e).clone())
    }

    /// Atoms and edges from an `(n + n(n-1)/2) × z` embedding.
    pub fn decode(&self, emb: &Tensor, n: usize) -> Result<UntypedGraph, CodecError> {
        let pairs = unordered_pairs(n);
        if n < 2 || emb.rows() != n + pairs.len() || emb.cols() != self.z {
            return Err(CodecError::BadCloud {
                expected: self.z,
                found: emb.shape().to_vec(),
            });
        }
        let e = extended_edges(n)?;
        let mut tape = Tape::new();
        let x = tape.leaf(emb.clone());
        let rec = self.decode_var(&mut tape, x, &e)?;
        let rec = tape.value(rec);
        let atoms = (0..n)
            .map(|r| {
                let row = &rec.row(r)[1..5];
                let best = (0..4).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                Element::from_index(best).expect("four classes")
            })
            .collect();
        let edges = pairs
            .iter()
            .enumerate()
            .filter(|&(k, _)| rec.get(n + k, PRESENT) >= EDGE_THRESHOLD)
            .map(|(_, &p)| p)
            .collect();
        Ok(UntypedGraph { atoms, edges })
    }
}
