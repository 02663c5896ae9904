use serde::{Deserialize, Serialize};

use super::{BondType, MolGraph};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub valid: bool,
    pub violations: Vec<String>,
}

/// Valence units used by each atom (aromatic bonds count 1).
pub fn valence_used(m: &MolGraph) -> Vec<u32> {
    let mut used = vec![0u32; m.n()];
    for b in m.bonds() {
        used[b.i] += b.kind.valence_units();
        used[b.j] += b.kind.valence_units();
    }
    used
}

/// Checks valence bounds, aromatic ring membership and connectivity.
pub fn check_validity(m: &MolGraph) -> ValidityReport {
    let mut violations = Vec::new();
    for (k, (&used, el)) in valence_used(m).iter().zip(m.atoms()).enumerate() {
        if used > el.max_valence() {
            violations.push(format!("valence {used} > {} at atom {k}", el.max_valence()));
        }
    }
    let adj = m.adjacency();
    for (k, nbrs) in adj.iter().enumerate() {
        let arom = nbrs.iter().filter(|&&(_, t)| t == BondType::Aromatic).count();
        if arom == 1 {
            violations.push(format!("atom {k} has a single aromatic bond"));
        }
    }
    for b in m.bonds() {
        if b.kind == BondType::Aromatic && !on_cycle(&adj, b.i, b.j) {
            violations.push(format!("aromatic bond ({}, {}) is not in a ring", b.i, b.j));
        }
    }
    let comps = m.component_count();
    if comps > 1 {
        violations.push(format!("disconnected: {comps} components"));
    }
    ValidityReport {
        valid: violations.is_empty(),
        violations,
    }
}

/// True if `j` is reachable from `i` without the edge `(i, j)`.
fn on_cycle(adj: &[Vec<(usize, BondType)>], i: usize, j: usize) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![i];
    seen[i] = true;
    while let Some(u) = stack.pop() {
        for &(v, _) in &adj[u] {
            if u == i && v == j {
                continue;
            }
            if v == j {
                return true;
            }
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    false
}
