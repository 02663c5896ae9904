//! Canonical graph keys by colour refinement plus individualization.
//!
//! The key is the lexicographically smallest encoding over all leaves of the
//! search tree, so two graphs share a key exactly when they are isomorphic.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::MolGraph;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CanonicalKey(Vec<u8>);

impl CanonicalKey {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

struct Ctx {
    n: usize,
    elem: Vec<u8>,
    adj: Vec<Vec<(usize, u8)>>,
    /// kind+1 of the bond between i and j, 0 if absent
    mat: Vec<u8>,
}

pub fn canonical_key(m: &MolGraph) -> CanonicalKey {
    let n = m.n();
    let mut mat = vec![0u8; n * n];
    let mut adj = vec![Vec::new(); n];
    for b in m.bonds() {
        let k = b.kind.index() as u8 + 1;
        mat[b.i * n + b.j] = k;
        mat[b.j * n + b.i] = k;
        adj[b.i].push((b.j, k));
        adj[b.j].push((b.i, k));
    }
    let ctx = Ctx {
        n,
        elem: m.atoms().iter().map(|a| a.index() as u8).collect(),
        adj,
        mat,
    };
    let initial: Vec<Vec<u32>> = (0..n)
        .map(|v| {
            let mut sig = vec![ctx.elem[v] as u32];
            let mut ks: Vec<u32> = ctx.adj[v].iter().map(|&(_, k)| k as u32).collect();
            ks.sort_unstable();
            sig.extend(ks);
            sig
        })
        .collect();
    let colors = refine(&ctx, rank(&initial));
    let mut best: Option<Vec<u8>> = None;
    search(&ctx, colors, &mut best);
    CanonicalKey(best.expect("at least one leaf"))
}

/// Dense ranks of signatures, ordered by signature.
fn rank<T: Ord + Clone>(sigs: &[T]) -> Vec<u32> {
    let mut sorted: Vec<T> = sigs.to_vec();
    sorted.sort();
    sorted.dedup();
    sigs.iter()
        .map(|s| sorted.binary_search(s).expect("present") as u32)
        .collect()
}

fn class_count(colors: &[u32]) -> usize {
    let mut c = colors.to_vec();
    c.sort_unstable();
    c.dedup();
    c.len()
}

fn refine(ctx: &Ctx, mut colors: Vec<u32>) -> Vec<u32> {
    let mut classes = class_count(&colors);
    loop {
        let sigs: Vec<(u32, Vec<(u8, u32)>)> = (0..ctx.n)
            .map(|v| {
                let mut nb: Vec<(u8, u32)> = ctx.adj[v].iter().map(|&(u, k)| (k, colors[u])).collect();
                nb.sort_unstable();
                (colors[v], nb)
            })
            .collect();
        let next = rank(&sigs);
        let c = class_count(&next);
        colors = next;
        if c == classes {
            return colors;
        }
        classes = c;
    }
}

fn search(ctx: &Ctx, colors: Vec<u32>, best: &mut Option<Vec<u8>>) {
    let n = ctx.n;
    if class_count(&colors) == n {
        let cert = certificate(ctx, &colors);
        if best.as_ref().is_none_or(|b| cert < *b) {
            *best = Some(cert);
        }
        return;
    }
    // smallest colour with more than one member
    let mut counts = vec![0usize; n];
    for &c in &colors {
        counts[c as usize] += 1;
    }
    let target = (0..n).find(|&c| counts[c] > 1).expect("non-discrete") as u32;
    let cell: Vec<usize> = (0..n).filter(|&v| colors[v] == target).collect();
    let mut tried: Vec<usize> = Vec::new();
    for &v in &cell {
        // swapping twins is an automorphism, so one representative suffices
        if tried.iter().any(|&u| twins(ctx, u, v)) {
            continue;
        }
        tried.push(v);
        let sigs: Vec<(u32, u8)> = (0..n).map(|u| (colors[u], u8::from(u != v))).collect();
        search(ctx, refine(ctx, rank(&sigs)), best);
    }
}

/// Same element and identical bonds to every third atom.
fn twins(ctx: &Ctx, a: usize, b: usize) -> bool {
    let n = ctx.n;
    ctx.elem[a] == ctx.elem[b] && (0..n).all(|w| w == a || w == b || ctx.mat[a * n + w] == ctx.mat[b * n + w])
}

fn certificate(ctx: &Ctx, colors: &[u32]) -> Vec<u8> {
    let n = ctx.n;
    let mut order = vec![0usize; n];
    for v in 0..n {
        order[colors[v] as usize] = v;
    }
    let mut cert = Vec::with_capacity(1 + n + n * (n - 1) / 2);
    cert.push(n as u8);
    cert.extend(order.iter().map(|&v| ctx.elem[v]));
    for i in 0..n {
        for j in i + 1..n {
            cert.push(ctx.mat[order[i] * n + order[j]]);
        }
    }
    cert
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{parse_smiles, BondType, Element};
    use proptest::prelude::*;

    fn key(s: &str) -> CanonicalKey {
        canonical_key(&parse_smiles(s).unwrap())
    }

    #[test]
    fn spelling_invariance() {
        assert_eq!(key("CCO"), key("OCC"));
        assert_ne!(key("CCO"), key("CCN"));
        assert_eq!(key("C1CC1O"), key("OC1CC1"));
        assert_eq!(key("c1ccccc1"), key("c1ccc(cc1)"));
        assert_ne!(key("C=CC"), key("CC=C".replace('=', "#").as_str()));
        assert_ne!(key("CC.C"), key("CCC"));
    }

    #[test]
    fn highly_symmetric_graphs_terminate() {
        let edgeless = MolGraph::new(vec![Element::C; 9], []).unwrap();
        let full = MolGraph::new(
            vec![Element::C; 9],
            (0..9).flat_map(|i| (i + 1..9).map(move |j| (i, j, BondType::Single))),
        )
        .unwrap();
        assert_ne!(canonical_key(&edgeless), canonical_key(&full));
        assert_eq!(key("C1CCCCCCCC1"), key("C1CCCCCCCC1"));
    }

    /// Reference isomorphism test by trying every bijection.
    fn isomorphic(a: &MolGraph, b: &MolGraph) -> bool {
        if a.n() != b.n() || a.bonds().len() != b.bonds().len() {
            return false;
        }
        let n = a.n();
        let mut perm: Vec<usize> = (0..n).collect();
        fn next_perm(p: &mut [usize]) -> bool {
            let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
                return false;
            };
            let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).unwrap();
            p.swap(i - 1, j);
            p[i..].reverse();
            true
        }
        loop {
            if (0..n).all(|k| a.atoms()[k] == b.atoms()[perm[k]])
                && a.bonds().iter().all(|x| b.bond_between(perm[x.i], perm[x.j]) == Some(x.kind))
            {
                return true;
            }
            if !next_perm(&mut perm) {
                return false;
            }
        }
    }

    fn small_graph() -> impl Strategy<Value = MolGraph> {
        (1usize..=6).prop_flat_map(|n| {
            let pairs = n * (n - 1) / 2;
            (
                proptest::collection::vec(0usize..2, n),
                proptest::collection::vec(0usize..3, pairs),
            )
                .prop_map(move |(el, bk)| {
                    let atoms = el.iter().map(|&e| Element::from_index(e).unwrap()).collect();
                    let mut bonds = Vec::new();
                    let mut k = 0;
                    for i in 0..n {
                        for j in i + 1..n {
                            if bk[k] > 0 {
                                bonds.push((i, j, BondType::from_index(bk[k] - 1).unwrap()));
                            }
                            k += 1;
                        }
                    }
                    MolGraph::new(atoms, bonds).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn permutation_invariant(g in small_graph(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut perm: Vec<usize> = (0..g.n()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(canonical_key(&g), canonical_key(&g.permuted(&perm)));
        }

        #[test]
        fn keys_match_brute_force_isomorphism(a in small_graph(), b in small_graph()) {
            prop_assert_eq!(canonical_key(&a) == canonical_key(&b), isomorphic(&a, &b));
        }
    }
}
