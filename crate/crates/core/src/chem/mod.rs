//! Heavy-atom molecular graphs over C, N, O and F.

mod canon;
mod dataset;
mod smiles;
mod validity;

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use canon::{canonical_key, CanonicalKey};
pub use dataset::{load_dataset, parse_dataset, Dataset, DatasetError, MAX_ATOMS};
pub use smiles::{parse_smiles, write_smiles, SmilesError};
pub use validity::{check_validity, valence_used, ValidityReport};

use crate::diffcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    C,
    N,
    O,
    F,
}

impl Element {
    pub const ALL: [Element; 4] = [Element::C, Element::N, Element::O, Element::F];

    pub fn max_valence(self) -> u32 {
        match self {
            Element::C => 4,
            Element::N => 3,
            Element::O => 2,
            Element::F => 1,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
        }
    }

    /// Position in the one-hot encoding.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Element> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondType {
    Single,
    Double,
    Triple,
    /// Ring bond with order 3/2.
    Aromatic,
}

impl BondType {
    pub const ALL: [BondType; 4] = [BondType::Single, BondType::Double, BondType::Triple, BondType::Aromatic];

    /// Nominal bond order: 1, 2, 3 and 3/2.
    pub fn valence_contribution(self) -> f64 {
        match self {
            BondType::Single => 1.0,
            BondType::Double => 2.0,
            BondType::Triple => 3.0,
            BondType::Aromatic => 1.5,
        }
    }

    /// Order counted against an atom's maximum valence. Aromatic bonds count
    /// at their Kekulé minimum of 1, so furan oxygens and fused ring atoms
    /// are not over-counted.
    pub fn valence_units(self) -> u32 {
        match self {
            BondType::Single | BondType::Aromatic => 1,
            BondType::Double => 2,
            BondType::Triple => 3,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<BondType> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub kind: BondType,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("a molecule needs at least one atom")]
    NoAtoms,
    #[error("self-loop on atom {0}")]
    SelfLoop(usize),
    #[error("duplicate bond between {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("bond ({0}, {1}) references an atom outside 0..{2}")]
    OutOfRange(usize, usize, usize),
}

/// Undirected labeled graph: one node per heavy atom, one edge per bond.
/// Bonds are stored with `i < j`, sorted.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MolGraph {
    atoms: Vec<Element>,
    bonds: Vec<Bond>,
}

impl MolGraph {
    pub fn new(atoms: Vec<Element>, bonds: impl IntoIterator<Item = (usize, usize, BondType)>) -> Result<Self, GraphError> {
        if atoms.is_empty() {
            return Err(GraphError::NoAtoms);
        }
        let n = atoms.len();
        let mut out: Vec<Bond> = Vec::new();
        for (a, b, kind) in bonds {
            if a >= n || b >= n {
                return Err(GraphError::OutOfRange(a, b, n));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            out.push(Bond { i, j, kind });
        }
        out.sort();
        for w in out.windows(2) {
            if w[0].i == w[1].i && w[0].j == w[1].j {
                return Err(GraphError::DuplicateBond(w[0].i, w[0].j));
            }
        }
        Ok(Self { atoms, bonds: out })
    }

    pub fn atoms(&self) -> &[Element] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn n(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<BondType> {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        self.bonds
            .binary_search_by(|x| (x.i, x.j).cmp(&(i, j)))
            .ok()
            .map(|k| self.bonds[k].kind)
    }

    /// Neighbour lists with bond kinds.
    pub fn adjacency(&self) -> Vec<Vec<(usize, BondType)>> {
        let mut adj = vec![Vec::new(); self.n()];
        for b in &self.bonds {
            adj[b.i].push((b.j, b.kind));
            adj[b.j].push((b.i, b.kind));
        }
        adj
    }

    /// Number of connected components.
    pub fn component_count(&self) -> usize {
        let adj = self.adjacency();
        let mut seen = vec![false; self.n()];
        let mut count = 0;
        for start in 0..self.n() {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() == 1
    }

    /// Relabels atoms so that old atom `k` becomes atom `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> MolGraph {
        assert_eq!(perm.len(), self.n());
        let mut atoms = vec![Element::C; self.n()];
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old];
        }
        let bonds = self.bonds.iter().map(|b| (perm[b.i], perm[b.j], b.kind));
        MolGraph::new(atoms, bonds).expect("permutation preserves validity")
    }

    /// `n × 4` one-hot element matrix.
    pub fn one_hot(&self) -> Tensor {
        let mut data = vec![0.0; self.n() * 4];
        for (k, a) in self.atoms.iter().enumerate() {
            data[k * 4 + a.index()] = 1.0;
        }
        Tensor::matrix(self.n(), 4, data)
    }

    /// Copy with one more bond; fails on duplicates.
    pub fn with_bond(&self, a: usize, b: usize, kind: BondType) -> Result<MolGraph, GraphError> {
        let bonds = self.bonds.iter().map(|x| (x.i, x.j, x.kind)).chain([(a, b, kind)]);
        MolGraph::new(self.atoms.clone(), bonds)
    }
}
