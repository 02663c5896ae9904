use std::rc::Rc;

use rand::Rng;

use super::{CodecError, UntypedGraph};
use crate::chem::{BondType, Element, MolGraph};
use crate::diffcore::{ParamStore, Tape, Tensor, Var};
use crate::gnn::{EdgeIndex, GcnLayer, Mlp};

const WIDTH: usize = 32;

/// Two graph convolutions over the untyped graph and an MLP head over
/// `[x_i ‖ x_j]` scoring the four bond types.
#[derive(Clone, Debug)]
pub struct EdgeTypeModel {
    pub store: ParamStore,
    gcn: [GcnLayer; 2],
    head: Mlp,
}

impl EdgeTypeModel {
    pub fn new(rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let gcn = [
            GcnLayer::new(&mut store, "etm.gcn0", 4, WIDTH, rng),
            GcnLayer::new(&mut store, "etm.gcn1", WIDTH, WIDTH, rng),
        ];
        let head = Mlp::new(&mut store, "etm.head", &[2 * WIDTH, WIDTH, 4], rng);
        Self { store, gcn, head }
    }

    /// `m × 4` logits for `edges`, averaged over both endpoint orders.
    pub fn logits(&self, tape: &mut Tape, atoms: &[Element], edges: &[(usize, usize)]) -> Result<Option<Var>, CodecError> {
        if edges.is_empty() {
            return Ok(None);
        }
        let n = atoms.len();
        let mut one_hot = Tensor::zeros(&[n, 4]);
        for (k, a) in atoms.iter().enumerate() {
            one_hot.set(k, a.index(), 1.0);
        }
        let e = EdgeIndex::undirected(n, edges.iter().copied())?;
        let x = tape.leaf(one_hot);
        let h = self.gcn[0].forward(tape, &self.store, x, &e)?;
        let h = tape.relu(h);
        let h = self.gcn[1].forward(tape, &self.store, h, &e)?;
        let h = tape.relu(h);
        let a: Rc<[usize]> = edges.iter().map(|p| p.0).collect();
        let b: Rc<[usize]> = edges.iter().map(|p| p.1).collect();
        let ha = tape.gather_rows(h, a)?;
        let hb = tape.gather_rows(h, b)?;
        let ab = tape.concat_cols(&[ha, hb])?;
        let ba = tape.concat_cols(&[hb, ha])?;
        let la = self.head.forward(tape, &self.store, ab)?;
        let lb = self.head.forward(tape, &self.store, ba)?;
        let sum = tape.add(la, lb)?;
        Ok(Some(tape.scale(sum, 0.5)))
    }

    /// Cross-entropy against the true bond types; `None` without bonds.
    pub fn loss(&self, tape: &mut Tape, m: &MolGraph) -> Result<Option<Var>, CodecError> {
        let edges: Vec<(usize, usize)> = m.bonds().iter().map(|b| (b.i, b.j)).collect();
        let Some(logits) = self.logits(tape, m.atoms(), &edges)? else {
            return Ok(None);
        };
        let targets: Rc<[usize]> = m.bonds().iter().map(|b| b.kind.index()).collect();
        Ok(Some(tape.softmax_cross_entropy(logits, targets)?))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TypedPrediction {
    pub graph: MolGraph,
    /// Edges for which no bond type fit the remaining valence.
    pub dropped: Vec<(usize, usize)>,
}

/// Assigns one bond type per edge. Edges are visited from the most to the
/// least confident prediction; each takes its highest-scoring type that keeps
/// both endpoints within their maximum valence, or is dropped if none does.
pub fn predict_edge_types(etm: &EdgeTypeModel, g: &UntypedGraph) -> Result<TypedPrediction, CodecError> {
    let mut tape = Tape::new();
    let logits = match etm.logits(&mut tape, &g.atoms, &g.edges)? {
        Some(l) => tape.value(l).clone(),
        None => {
            return Ok(TypedPrediction {
                graph: MolGraph::new(g.atoms.clone(), [])?,
                dropped: Vec::new(),
            })
        }
    };
    let probs = crate::diffcore::softmax_rows(&logits);
    let confidence = |k: usize| probs.row(k).iter().cloned().fold(f64::MIN, f64::max);
    let mut order: Vec<usize> = (0..g.edges.len()).collect();
    order.sort_by(|&a, &b| confidence(b).total_cmp(&confidence(a)));

    let mut used = vec![0u32; g.atoms.len()];
    let mut bonds = Vec::new();
    let mut dropped = Vec::new();
    for k in order {
        let (i, j) = g.edges[k];
        let mut kinds: Vec<usize> = (0..4).collect();
        kinds.sort_by(|&a, &b| logits.get(k, b).total_cmp(&logits.get(k, a)));
        let fits = |t: BondType| {
            used[i] + t.valence_units() <= g.atoms[i].max_valence() && used[j] + t.valence_units() <= g.atoms[j].max_valence()
        };
        match kinds.into_iter().map(|c| BondType::from_index(c).expect("four classes")).find(|&t| fits(t)) {
            Some(t) => {
                used[i] += t.valence_units();
                used[j] += t.valence_units();
                bonds.push((i, j, t));
            }
            None => dropped.push((i, j)),
        }
    }
    dropped.sort_unstable();
    Ok(TypedPrediction {
        graph: MolGraph::new(g.atoms.clone(), bonds)?,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{parse_smiles, valence_used};
    use crate::diffcore::Adam;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> EdgeTypeModel {
        EdgeTypeModel::new(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn fluorine_forces_single() {
        let etm = model(1);
        let g = UntypedGraph {
            atoms: vec![Element::F, Element::C],
            edges: vec![(0, 1)],
        };
        let p = predict_edge_types(&etm, &g).unwrap();
        assert_eq!(p.graph.bond_between(0, 1), Some(BondType::Single));
    }

    #[test]
    fn overloaded_atoms_drop_edges() {
        let etm = model(2);
        // fluorine with two neighbours: one edge must go
        let g = UntypedGraph {
            atoms: vec![Element::F, Element::C, Element::C],
            edges: vec![(0, 1), (0, 2), (1, 2)],
        };
        let p = predict_edge_types(&etm, &g).unwrap();
        assert_eq!(p.dropped.len(), 1);
        assert_eq!(p.dropped[0].0, 0);
    }

    #[test]
    fn logits_are_symmetric() {
        let etm = model(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let n = 7;
            let atoms: Vec<Element> = (0..n).map(|_| Element::from_index(rng.random_range(0..4)).unwrap()).collect();
            let edges: Vec<(usize, usize)> = crate::gnn::unordered_pairs(n).into_iter().filter(|_| rng.random_bool(0.4)).collect();
            if edges.is_empty() {
                continue;
            }
            let flipped: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (b, a)).collect();
            let mut tape = Tape::new();
            let a = etm.logits(&mut tape, &atoms, &edges).unwrap().unwrap();
            let b = etm.logits(&mut tape, &atoms, &flipped).unwrap().unwrap();
            assert!(tape.value(a).max_abs_diff(tape.value(b)) < 1e-12);
        }
    }

    #[test]
    fn valence_never_exceeded_on_random_graphs() {
        let etm = model(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let n = rng.random_range(2..10);
            let atoms: Vec<Element> = (0..n).map(|_| Element::from_index(rng.random_range(0..4)).unwrap()).collect();
            let edges = crate::gnn::unordered_pairs(n).into_iter().filter(|_| rng.random_bool(0.5)).collect();
            let p = predict_edge_types(&etm, &UntypedGraph { atoms, edges }).unwrap();
            for (used, a) in valence_used(&p.graph).iter().zip(p.graph.atoms()) {
                assert!(*used <= a.max_valence());
            }
        }
    }

    #[test]
    fn overfits_bond_types() {
        let mut etm = model(7);
        let m = parse_smiles("N#CC1=CC=C(O1)C=O").unwrap();
        let mut opt = Adam::new(&etm.store, 1e-2);
        for _ in 0..300 {
            let mut tape = Tape::new();
            let loss = etm.loss(&mut tape, &m).unwrap().unwrap();
            let g = tape.backward(loss).unwrap();
            opt.apply(&mut etm.store, &g).unwrap();
        }
        let g = UntypedGraph {
            atoms: m.atoms().to_vec(),
            edges: m.bonds().iter().map(|b| (b.i, b.j)).collect(),
        };
        let p = predict_edge_types(&etm, &g).unwrap();
        assert_eq!(p.graph, m);
        assert!(p.dropped.is_empty());
    }
}
