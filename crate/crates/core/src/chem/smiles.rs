//! SMILES subset: atoms `C N O F` (and aromatic `c n o`), bonds `- = # :`,
//! branches, ring closures `0-9` and `%nn`, and `.` between components.
//! Bracket atoms (charges, explicit hydrogens, isotopes) and stereo marks are
//! rejected.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::{BondType, Element, GraphError, MolGraph};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmilesError {
    #[error("empty SMILES")]
    EmptyInput,
    #[error("unsupported atom `{found}` at byte {offset}")]
    UnsupportedAtom { offset: usize, found: String },
    #[error("unsupported feature `{found}` at byte {offset}")]
    UnsupportedFeature { offset: usize, found: char },
    #[error("ring {label} opened at byte {offset} is never closed")]
    UnclosedRing { offset: usize, label: u32 },
    #[error("unbalanced parenthesis at byte {offset}")]
    UnbalancedParenthesis { offset: usize },
    #[error("unexpected `{found}` at byte {offset}")]
    UnexpectedChar { offset: usize, found: char },
    #[error("invalid ring bond at byte {offset}: {source}")]
    InvalidRingBond { offset: usize, source: GraphError },
}

impl SmilesError {
    pub fn offset(&self) -> usize {
        match self {
            SmilesError::EmptyInput => 0,
            SmilesError::UnsupportedAtom { offset, .. }
            | SmilesError::UnsupportedFeature { offset, .. }
            | SmilesError::UnclosedRing { offset, .. }
            | SmilesError::UnbalancedParenthesis { offset }
            | SmilesError::UnexpectedChar { offset, .. }
            | SmilesError::InvalidRingBond { offset, .. } => *offset,
        }
    }
}

struct OpenRing {
    atom: usize,
    bond: Option<BondType>,
    offset: usize,
}

pub fn parse_smiles(text: &str) -> Result<MolGraph, SmilesError> {
    if text.is_empty() {
        return Err(SmilesError::EmptyInput);
    }
    let bytes = text.as_bytes();
    let mut atoms: Vec<Element> = Vec::new();
    let mut aromatic: Vec<bool> = Vec::new();
    let mut bonds: Vec<(usize, usize, BondType)> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut pending: Option<(BondType, usize)> = None;
    let mut branches: Vec<(usize, usize)> = Vec::new();
    let mut rings: HashMap<u32, OpenRing> = HashMap::new();

    let implicit = |a: bool, b: bool| if a && b { BondType::Aromatic } else { BondType::Single };

    let mut pos = 0;
    while pos < bytes.len() {
        let c = bytes[pos] as char;
        let start = pos;
        match c {
            'C' | 'N' | 'O' | 'F' | 'c' | 'n' | 'o' => {
                if c == 'C' && bytes.get(pos + 1) == Some(&b'l') {
                    return Err(SmilesError::UnsupportedAtom {
                        offset: start,
                        found: "Cl".into(),
                    });
                }
                let (el, arom) = match c {
                    'C' => (Element::C, false),
                    'N' => (Element::N, false),
                    'O' => (Element::O, false),
                    'F' => (Element::F, false),
                    'c' => (Element::C, true),
                    'n' => (Element::N, true),
                    _ => (Element::O, true),
                };
                let idx = atoms.len();
                atoms.push(el);
                aromatic.push(arom);
                if let Some(p) = prev {
                    let kind = pending.take().map_or_else(|| implicit(aromatic[p], arom), |(k, _)| k);
                    bonds.push((p, idx, kind));
                } else if let Some((_, off)) = pending {
                    return Err(SmilesError::UnexpectedChar {
                        offset: off,
                        found: bytes[off] as char,
                    });
                }
                prev = Some(idx);
                pos += 1;
            }
            '-' | '=' | '#' | ':' => {
                if pending.is_some() || prev.is_none() {
                    return Err(SmilesError::UnexpectedChar { offset: start, found: c });
                }
                let kind = match c {
                    '-' => BondType::Single,
                    '=' => BondType::Double,
                    '#' => BondType::Triple,
                    _ => BondType::Aromatic,
                };
                pending = Some((kind, start));
                pos += 1;
            }
            '(' => {
                let Some(p) = prev else {
                    return Err(SmilesError::UnbalancedParenthesis { offset: start });
                };
                if pending.is_some() {
                    return Err(SmilesError::UnexpectedChar { offset: start, found: c });
                }
                branches.push((p, start));
                pos += 1;
            }
            ')' => {
                let Some((p, _)) = branches.pop() else {
                    return Err(SmilesError::UnbalancedParenthesis { offset: start });
                };
                if pending.is_some() {
                    return Err(SmilesError::UnexpectedChar { offset: start, found: c });
                }
                prev = Some(p);
                pos += 1;
            }
            '0'..='9' | '%' => {
                let label = if c == '%' {
                    let digits = text.get(pos + 1..pos + 3).filter(|d| d.bytes().all(|b| b.is_ascii_digit()));
                    let Some(d) = digits else {
                        return Err(SmilesError::UnexpectedChar { offset: start, found: c });
                    };
                    pos += 3;
                    d.parse::<u32>().expect("two digits")
                } else {
                    pos += 1;
                    c.to_digit(10).expect("digit")
                };
                let Some(p) = prev else {
                    return Err(SmilesError::UnexpectedChar { offset: start, found: c });
                };
                let bond = pending.take().map(|(k, _)| k);
                match rings.remove(&label) {
                    Some(open) => {
                        let kind = match (open.bond, bond) {
                            (Some(a), Some(b)) if a != b => {
                                return Err(SmilesError::UnexpectedChar { offset: start, found: c });
                            }
                            (Some(a), _) | (None, Some(a)) => a,
                            (None, None) => implicit(aromatic[open.atom], aromatic[p]),
                        };
                        if open.atom == p {
                            return Err(SmilesError::InvalidRingBond {
                                offset: start,
                                source: GraphError::SelfLoop(p),
                            });
                        }
                        if bonds.iter().any(|&(a, b, _)| (a, b) == (open.atom, p) || (a, b) == (p, open.atom)) {
                            return Err(SmilesError::InvalidRingBond {
                                offset: start,
                                source: GraphError::DuplicateBond(open.atom.min(p), open.atom.max(p)),
                            });
                        }
                        bonds.push((open.atom, p, kind));
                    }
                    None => {
                        rings.insert(
                            label,
                            OpenRing {
                                atom: p,
                                bond,
                                offset: start,
                            },
                        );
                    }
                }
            }
            '.' => {
                if pending.is_some() || prev.is_none() {
                    return Err(SmilesError::UnexpectedChar { offset: start, found: c });
                }
                prev = None;
                pos += 1;
            }
            '[' => {
                let end = text[pos..].find(']').map_or(text.len(), |e| pos + e + 1);
                return Err(SmilesError::UnsupportedAtom {
                    offset: start,
                    found: text[pos..end].to_string(),
                });
            }
            '/' | '\\' | '@' | '+' => {
                return Err(SmilesError::UnsupportedFeature { offset: start, found: c });
            }
            _ if c.is_ascii_alphabetic() || c == '*' => {
                let len = if bytes.get(pos + 1).is_some_and(|b| b.is_ascii_lowercase()) && c.is_ascii_uppercase() {
                    2
                } else {
                    1
                };
                return Err(SmilesError::UnsupportedAtom {
                    offset: start,
                    found: text[pos..(pos + len).min(text.len())].to_string(),
                });
            }
            _ => {
                let ch = text[pos..].chars().next().unwrap_or('?');
                return Err(SmilesError::UnexpectedChar { offset: start, found: ch });
            }
        }
    }

    if let Some((_, off)) = pending {
        return Err(SmilesError::UnexpectedChar {
            offset: off,
            found: bytes[off] as char,
        });
    }
    if let Some(open) = rings.values().min_by_key(|r| r.offset) {
        let label = rings
            .iter()
            .find(|(_, r)| r.offset == open.offset)
            .map(|(l, _)| *l)
            .unwrap_or_default();
        return Err(SmilesError::UnclosedRing {
            offset: open.offset,
            label,
        });
    }
    if let Some(&(_, off)) = branches.last() {
        return Err(SmilesError::UnbalancedParenthesis { offset: off });
    }
    if atoms.is_empty() {
        return Err(SmilesError::EmptyInput);
    }
    MolGraph::new(atoms, bonds).map_err(|source| SmilesError::InvalidRingBond { offset: 0, source })
}

/// Writes `m` so that [`parse_smiles`] gives back an isomorphic graph.
///
/// Atoms with at least one aromatic bond are written lowercase (F excepted,
/// which has no aromatic form). Components are joined with `.`.
pub fn write_smiles(m: &MolGraph) -> String {
    let n = m.n();
    let adj = m.adjacency();
    let lower: Vec<bool> = (0..n)
        .map(|k| m.atoms()[k] != Element::F && adj[k].iter().any(|&(_, t)| t == BondType::Aromatic))
        .collect();

    // Pass 1: DFS order, tree children and ring-closure bonds.
    let mut visited = vec![false; n];
    let mut order: Vec<usize> = Vec::new();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut roots: Vec<usize> = Vec::new();
    let mut is_tree = std::collections::HashSet::new();
    for root in 0..n {
        if visited[root] {
            continue;
        }
        roots.push(root);
        let mut stack = vec![(root, usize::MAX)];
        while let Some((u, parent)) = stack.pop() {
            if visited[u] {
                continue;
            }
            visited[u] = true;
            order.push(u);
            if parent != usize::MAX {
                children[parent].push(u);
                is_tree.insert((parent.min(u), parent.max(u)));
            }
            let mut nbrs: Vec<usize> = adj[u].iter().map(|&(v, _)| v).filter(|&v| !visited[v]).collect();
            nbrs.sort_unstable_by(|a, b| b.cmp(a));
            for v in nbrs {
                stack.push((v, u));
            }
        }
    }
    let rank: HashMap<usize, usize> = order.iter().enumerate().map(|(r, &a)| (a, r)).collect();
    // ring bonds keyed by the endpoint written first
    let mut ring_open: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut ring_close: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for b in m.bonds() {
        if is_tree.contains(&(b.i, b.j)) {
            continue;
        }
        let (first, second) = if rank[&b.i] < rank[&b.j] { (b.i, b.j) } else { (b.j, b.i) };
        ring_open.entry(first).or_default().push(second);
        ring_close.entry(second).or_default().push(first);
    }

    let bond_symbol = |a: usize, b: usize| -> &'static str {
        let kind = m.bond_between(a, b).expect("bond");
        match kind {
            BondType::Single if lower[a] && lower[b] => "-",
            BondType::Single => "",
            BondType::Double => "=",
            BondType::Triple => "#",
            BondType::Aromatic if lower[a] && lower[b] => "",
            BondType::Aromatic => ":",
        }
    };

    // Pass 2: emit.
    let mut out = String::new();
    let mut labels: HashMap<(usize, usize), u32> = HashMap::new();
    let mut free: Vec<bool> = vec![true; 100];
    for (ci, &root) in roots.iter().enumerate() {
        if ci > 0 {
            out.push('.');
        }
        // iterative emission: (atom, incoming parent, closing parens after)
        enum Step {
            Atom(usize, usize),
            Text(&'static str),
        }
        let mut stack = vec![Step::Atom(root, usize::MAX)];
        while let Some(step) = stack.pop() {
            let (u, parent) = match step {
                Step::Text(t) => {
                    out.push_str(t);
                    continue;
                }
                Step::Atom(u, p) => (u, p),
            };
            if parent != usize::MAX {
                out.push_str(bond_symbol(parent, u));
            }
            let sym = m.atoms()[u].symbol();
            if lower[u] {
                out.push_str(&sym.to_ascii_lowercase());
            } else {
                out.push_str(sym);
            }
            // closings first so labels are released early
            if let Some(partners) = ring_close.get(&u) {
                for &p in partners {
                    let label = labels.remove(&(p, u)).expect("opened");
                    free[label as usize] = true;
                    push_label(&mut out, label);
                }
            }
            if let Some(partners) = ring_open.get(&u) {
                for &q in partners {
                    let label = (1..100).find(|&l| free[l]).expect("fewer than 100 open rings") as u32;
                    free[label as usize] = false;
                    labels.insert((u, q), label);
                    out.push_str(bond_symbol(u, q));
                    push_label(&mut out, label);
                }
            }
            let kids = &children[u];
            // last child continues the chain; others are branches
            for (k, &child) in kids.iter().enumerate().rev() {
                if k + 1 == kids.len() {
                    stack.push(Step::Atom(child, u));
                } else {
                    stack.push(Step::Text(")"));
                    stack.push(Step::Atom(child, u));
                    stack.push(Step::Text("("));
                }
            }
        }
    }
    out
}

fn push_label(out: &mut String, label: u32) {
    if label < 10 {
        out.push(char::from_digit(label, 10).expect("digit"));
    } else {
        out.push_str(&format!("%{label:02}"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::canonical_key;

    fn bonds(m: &MolGraph) -> Vec<(usize, usize, BondType)> {
        m.bonds().iter().map(|b| (b.i, b.j, b.kind)).collect()
    }

    #[test]
    fn ethanol() {
        let m = parse_smiles("CCO").unwrap();
        assert_eq!(m.atoms(), &[Element::C, Element::C, Element::O]);
        assert_eq!(bonds(&m), vec![(0, 1, BondType::Single), (1, 2, BondType::Single)]);
    }

    #[test]
    fn cyclopropane() {
        let m = parse_smiles("C1CC1").unwrap();
        assert_eq!(m.atoms(), &[Element::C; 3]);
        assert_eq!(
            bonds(&m),
            vec![(0, 1, BondType::Single), (0, 2, BondType::Single), (1, 2, BondType::Single)]
        );
    }

    #[test]
    fn hydrogen_cyanide() {
        let m = parse_smiles("C#N").unwrap();
        assert_eq!(m.atoms(), &[Element::C, Element::N]);
        assert_eq!(bonds(&m), vec![(0, 1, BondType::Triple)]);
    }

    #[test]
    fn aromatic_ring_and_branches() {
        let m = parse_smiles("c1ccoc1C(=O)N").unwrap();
        assert_eq!(m.n(), 8);
        let arom = m.bonds().iter().filter(|b| b.kind == BondType::Aromatic).count();
        assert_eq!(arom, 5);
        assert_eq!(m.bond_between(5, 6), Some(BondType::Double));
        assert_eq!(m.bond_between(4, 5), Some(BondType::Single));
    }

    #[test]
    fn ring_bond_symbols_and_percent_labels() {
        let a = parse_smiles("C=1CCC1").unwrap();
        assert_eq!(a.bond_between(0, 3), Some(BondType::Double));
        let b = parse_smiles("C%12CC%12").unwrap();
        assert_eq!(b.bonds().len(), 3);
    }

    #[test]
    fn errors_carry_offsets() {
        assert_eq!(parse_smiles(""), Err(SmilesError::EmptyInput));
        assert!(matches!(parse_smiles("C1CC"), Err(SmilesError::UnclosedRing { offset: 1, label: 1 })));
        assert!(matches!(parse_smiles("CC(C"), Err(SmilesError::UnbalancedParenthesis { offset: 2 })));
        assert!(matches!(parse_smiles("CC)C"), Err(SmilesError::UnbalancedParenthesis { offset: 2 })));
        assert!(matches!(parse_smiles("CCl"), Err(SmilesError::UnsupportedAtom { offset: 1, .. })));
        assert!(matches!(parse_smiles("C[NH3+]"), Err(SmilesError::UnsupportedAtom { offset: 1, .. })));
        assert!(matches!(parse_smiles("CS"), Err(SmilesError::UnsupportedAtom { offset: 1, .. })));
        assert!(matches!(parse_smiles("C/C=C/C"), Err(SmilesError::UnsupportedFeature { offset: 1, .. })));
        assert!(matches!(parse_smiles("C11"), Err(SmilesError::InvalidRingBond { .. })));
        assert!(matches!(parse_smiles("C=1CC#1"), Err(SmilesError::UnexpectedChar { .. })));
        assert!(matches!(parse_smiles("CC="), Err(SmilesError::UnexpectedChar { offset: 2, .. })));
    }

    #[test]
    fn write_simple_cases() {
        assert_eq!(write_smiles(&parse_smiles("C").unwrap()), "C");
        let co = write_smiles(&parse_smiles("C=O").unwrap());
        assert!(co == "C=O" || co == "O=C", "{co}");
    }

    #[test]
    fn write_round_trips() {
        for s in [
            "C1CC1",
            "c1ccccc1",
            "c1ccoc1C(=O)N",
            "CC12CC1N=C(N)C2=O",
            "C1CC23OC4CC12NC34",
            "CC.O",
            "C1CC2CC3CC4CC5CC6CC7CC8CC9CC%10CC%11CC1C2C3C4C5C6C7C8C9%10%11",
            "Fc1cccc1F",
            "c1ccc(cc1)-c1ccccc1",
        ] {
            let m = parse_smiles(s).unwrap();
            let w = write_smiles(&m);
            let back = parse_smiles(&w).unwrap_or_else(|e| panic!("{s} -> {w}: {e}"));
            assert_eq!(canonical_key(&m), canonical_key(&back), "{s} -> {w}");
        }
    }
}
