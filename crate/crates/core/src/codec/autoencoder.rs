use std::rc::Rc;

use rand::Rng;

use super::{CodecError, LatentCloud, UntypedGraph};
use crate::chem::{Element, MolGraph};
use crate::diffcore::{ParamStore, Tape, Tensor, Var};
use crate::gnn::{complete_graph_edges, pair_sq_distances, unordered_pairs, EdgeIndex, Linear, Mlp, PnaLayer};

/// Hidden width of the PNA stacks and the edge predictor.
pub const HIDDEN: usize = 32;
/// Edge probability at or above which a pair is bonded.
pub const EDGE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderKind {
    /// PNA over the complete graph of latent points, then a pairwise MLP.
    Gnn,
    /// PNA over the points plus one dummy node per pair carrying the pair's
    /// distance; dummy outputs are classified.
    Egnn,
}

impl DecoderKind {
    fn name(self) -> &'static str {
        match self {
            DecoderKind::Gnn => "GNN",
            DecoderKind::Egnn => "EGNN",
        }
    }
}

/// Graph encoder (one-hot atoms to `z` columns per atom) and edge decoder.
#[derive(Clone, Debug)]
pub struct GraphAutoencoder {
    pub store: ParamStore,
    z: usize,
    kind: DecoderKind,
    enc: [PnaLayer; 2],
    dec: [PnaLayer; 2],
    edge: Mlp,
    threshold: f64,
}

impl GraphAutoencoder {
    pub fn new(z: usize, kind: DecoderKind, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let enc = [
            PnaLayer::new(&mut store, "ae.enc0", 4, HIDDEN, rng),
            PnaLayer::new(&mut store, "ae.enc1", HIDDEN, z, rng),
        ];
        let dec_in = match kind {
            DecoderKind::Gnn => z + 2,
            DecoderKind::Egnn => 3,
        };
        let dec = [
            PnaLayer::new(&mut store, "ae.dec0", dec_in, HIDDEN, rng),
            PnaLayer::new(&mut store, "ae.dec1", HIDDEN, 4, rng),
        ];
        let edge_in = match kind {
            DecoderKind::Gnn => 8,
            DecoderKind::Egnn => 4,
        };
        let edge = Mlp::new(&mut store, "ae.edge", &[edge_in, HIDDEN, 1], rng);
        Self {
            store,
            z,
            kind,
            enc,
            dec,
            edge,
            threshold: EDGE_THRESHOLD,
        }
    }

    pub fn z(&self) -> usize {
        self.z
    }

    pub fn kind(&self) -> DecoderKind {
        self.kind
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, tau: f64) {
        assert!(tau > 0.0 && tau < 1.0, "threshold must lie in (0, 1)");
        self.threshold = tau;
    }

    /// `n × z` graph embedding of `m`.
    pub fn encode_graph(&self, tape: &mut Tape, m: &MolGraph) -> Result<Var, CodecError> {
        let e = EdgeIndex::undirected(m.n(), m.bonds().iter().map(|b| (b.i, b.j)))?;
        let x = tape.leaf(m.one_hot());
        let h = self.enc[0].forward(tape, &self.store, x, &e)?;
        let h = tape.relu(h);
        Ok(self.enc[1].forward(tape, &self.store, h, &e)?)
    }

    /// Edge logits for every pair of `unordered_pairs(n)` as a `p × 1`
    /// column; `None` for a single atom.
    pub fn edge_logits(&self, tape: &mut Tape, cloud: Var) -> Result<Option<Var>, CodecError> {
        let n = tape.shape(cloud)[0];
        if n < 2 {
            return Ok(None);
        }
        let pairs = unordered_pairs(n);
        let logits = match self.kind {
            DecoderKind::Gnn => {
                let e = complete_graph_edges(n, false)?;
                let h = self.dec[0].forward(tape, &self.store, cloud, &e)?;
                let h = tape.relu(h);
                let h = self.dec[1].forward(tape, &self.store, h, &e)?;
                let a: Rc<[usize]> = pairs.iter().map(|p| p.0).collect();
                let b: Rc<[usize]> = pairs.iter().map(|p| p.1).collect();
                let ha = tape.gather_rows(h, a)?;
                let hb = tape.gather_rows(h, b)?;
                let ab = tape.concat_cols(&[ha, hb])?;
                let ba = tape.concat_cols(&[hb, ha])?;
                let la = self.edge.forward(tape, &self.store, ab)?;
                let lb = self.edge.forward(tape, &self.store, ba)?;
                let sum = tape.add(la, lb)?;
                tape.scale(sum, 0.5)
            }
            DecoderKind::Egnn => {
                let p = pairs.len();
                let d2 = pair_sq_distances(tape, cloud, &pairs)?;
                let d = tape.sqrt(d2);
                let flag = tape.leaf(Tensor::full(&[p, 1], 1.0));
                let dummy = tape.concat_cols(&[flag, d, d2])?;
                let orig = tape.leaf(Tensor::zeros(&[n, 3]));
                let x = tape.concat_rows(&[orig, dummy])?;
                let e = EdgeIndex::undirected(
                    n + p,
                    pairs.iter().enumerate().flat_map(|(k, &(i, j))| [(n + k, i), (n + k, j)]),
                )?;
                let h = self.dec[0].forward(tape, &self.store, x, &e)?;
                let h = tape.relu(h);
                let h = self.dec[1].forward(tape, &self.store, h, &e)?;
                let rows: Rc<[usize]> = (n..n + p).collect();
                let hd = tape.gather_rows(h, rows)?;
                self.edge.forward(tape, &self.store, hd)?
            }
        };
        Ok(Some(logits))
    }
}

/// Linear 4 → 2 encoder and 2 → 4 softmax decoder for atom types.
#[derive(Clone, Debug)]
pub struct AtomTypeAutoencoder {
    pub store: ParamStore,
    enc: Linear,
    dec: Linear,
}

impl AtomTypeAutoencoder {
    pub fn new(rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let enc = Linear::new(&mut store, "at.enc", 4, 2, rng);
        let dec = Linear::new(&mut store, "at.dec", 2, 4, rng);
        Self { store, enc, dec }
    }

    pub fn encode(&self, tape: &mut Tape, one_hot: Var) -> Result<Var, CodecError> {
        Ok(self.enc.forward(tape, &self.store, one_hot)?)
    }

    /// Row-wise class probabilities (`n × 4`).
    pub fn decode(&self, tape: &mut Tape, emb: Var) -> Result<Var, CodecError> {
        let logits = self.dec.forward(tape, &self.store, emb)?;
        Ok(tape.softmax_rows(logits))
    }

    /// Most probable element per row; ties go to the earlier element.
    pub fn decode_atoms(&self, emb: &Tensor) -> Result<Vec<Element>, CodecError> {
        let mut tape = Tape::new();
        let e = tape.leaf(emb.clone());
        let p = self.decode(&mut tape, e)?;
        let p = tape.value(p);
        Ok((0..p.rows())
            .map(|r| {
                let row = p.row(r);
                let best = (0..4).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                Element::from_index(best).expect("four classes")
            })
            .collect())
    }
}

/// Latent cloud of `m` on the tape: graph columns then atom-type columns.
pub(crate) fn cloud_var(tape: &mut Tape, ae: &GraphAutoencoder, at: &AtomTypeAutoencoder, m: &MolGraph) -> Result<Var, CodecError> {
    let g = ae.encode_graph(tape, m)?;
    let x = tape.leaf(m.one_hot());
    let a = at.encode(tape, x)?;
    Ok(tape.concat_cols(&[g, a])?)
}

pub fn encode(ae: &GraphAutoencoder, at: &AtomTypeAutoencoder, m: &MolGraph) -> Result<LatentCloud, CodecError> {
    let mut tape = Tape::new();
    let c = cloud_var(&mut tape, ae, at, m)?;
    LatentCloud::new(tape.value(c).clone(), ae.z())
}

pub struct Reconstruction {
    pub loss: Var,
    pub atom_term: Var,
    pub edge_term: Option<Var>,
    /// The encoded cloud, for extra penalties on the embedding.
    pub cloud: Var,
}

/// MSE between edge probabilities and the 0/1 adjacency over all pairs, plus
/// MSE between decoded atom probabilities and the one-hot atoms.
pub fn reconstruction_loss(
    tape: &mut Tape,
    ae: &GraphAutoencoder,
    at: &AtomTypeAutoencoder,
    m: &MolGraph,
) -> Result<Reconstruction, CodecError> {
    let cloud = cloud_var(tape, ae, at, m)?;
    let z = ae.z();
    let atom_emb = tape.slice_cols(cloud, z, z + 2)?;
    let probs = at.decode(tape, atom_emb)?;
    let target = tape.leaf(m.one_hot());
    let atom_term = tape.mse(probs, target)?;
    let mut loss = atom_term;
    let mut edge_term = None;
    if let Some(logits) = ae.edge_logits(tape, cloud)? {
        let p = tape.sigmoid(logits);
        let adj: Vec<f64> = unordered_pairs(m.n())
            .into_iter()
            .map(|(i, j)| if m.bond_between(i, j).is_some() { 1.0 } else { 0.0 })
            .collect();
        let rows = adj.len();
        let t = tape.leaf(Tensor::matrix(rows, 1, adj));
        let edge = tape.mse(p, t)?;
        edge_term = Some(edge);
        loss = tape.add(loss, edge)?;
    }
    Ok(Reconstruction {
        loss,
        atom_term,
        edge_term,
        cloud,
    })
}

/// Edge probabilities for every unordered pair of the cloud.
pub(crate) fn edge_probabilities(ae: &GraphAutoencoder, cloud: &Tensor) -> Result<Vec<f64>, CodecError> {
    let mut tape = Tape::new();
    let c = tape.leaf(cloud.clone());
    Ok(match ae.edge_logits(&mut tape, c)? {
        Some(l) => {
            let p = tape.sigmoid(l);
            tape.value(p).data().to_vec()
        }
        None => Vec::new(),
    })
}

fn decode_any(ae: &GraphAutoencoder, at: &AtomTypeAutoencoder, cloud: &LatentCloud) -> Result<UntypedGraph, CodecError> {
    let z = ae.z();
    let pts = cloud.points();
    if pts.cols() != z + 2 {
        return Err(CodecError::BadCloud {
            expected: z + 2,
            found: pts.shape().to_vec(),
        });
    }
    let atom_cols = Tensor::matrix(
        pts.rows(),
        2,
        (0..pts.rows()).flat_map(|r| pts.row(r)[z..].to_vec()).collect(),
    );
    let atoms = at.decode_atoms(&atom_cols)?;
    let probs = edge_probabilities(ae, pts)?;
    let edges = unordered_pairs(pts.rows())
        .into_iter()
        .zip(probs)
        .filter(|&(_, p)| p >= ae.threshold())
        .map(|(e, _)| e)
        .collect();
    Ok(UntypedGraph { atoms, edges })
}

pub fn decode_gnn(ae: &GraphAutoencoder, at: &AtomTypeAutoencoder, cloud: &LatentCloud) -> Result<UntypedGraph, CodecError> {
    if ae.kind() != DecoderKind::Gnn {
        return Err(CodecError::WrongDecoder {
            expected: DecoderKind::Gnn.name(),
        });
    }
    decode_any(ae, at, cloud)
}

pub fn decode_egnn(ae: &GraphAutoencoder, at: &AtomTypeAutoencoder, cloud: &LatentCloud) -> Result<UntypedGraph, CodecError> {
    if ae.kind() != DecoderKind::Egnn {
        return Err(CodecError::WrongDecoder {
            expected: DecoderKind::Egnn.name(),
        });
    }
    if cloud.n() < 2 {
        return Err(CodecError::TooFewPoints(cloud.n()));
    }
    decode_any(ae, at, cloud)
}

impl GraphAutoencoder {
    /// Decodes with whichever decoder this model carries.
    pub fn decode(&self, at: &AtomTypeAutoencoder, cloud: &LatentCloud) -> Result<UntypedGraph, CodecError> {
        match self.kind {
            DecoderKind::Gnn => decode_gnn(self, at, cloud),
            DecoderKind::Egnn => decode_egnn(self, at, cloud),
        }
    }
}
