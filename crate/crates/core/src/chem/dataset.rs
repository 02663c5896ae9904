use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use thiserror::Error;

use super::{canonical_key, check_validity, parse_smiles, CanonicalKey, MolGraph};

/// Largest heavy-atom count kept by the loader.
pub const MAX_ATOMS: usize = 9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no molecule could be loaded ({lines} lines tried)")]
    AllLinesFailed { lines: usize },
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub molecules: Vec<MolGraph>,
    pub canonical_keys: HashSet<CanonicalKey>,
    /// Heavy-atom count to number of molecules.
    pub size_histogram: BTreeMap<usize, usize>,
    /// Lines that failed to parse, exceeded [`MAX_ATOMS`] or broke a valence
    /// rule (uncharged nitro groups, for instance).
    pub skipped: usize,
}

impl Dataset {
    pub fn from_molecules(molecules: Vec<MolGraph>) -> Self {
        let mut size_histogram = BTreeMap::new();
        let mut canonical_keys = HashSet::new();
        for m in &molecules {
            *size_histogram.entry(m.n()).or_insert(0) += 1;
            canonical_keys.insert(canonical_key(m));
        }
        Self {
            molecules,
            canonical_keys,
            size_histogram,
            skipped: 0,
        }
    }

    /// Keeps molecules with at least `min_atoms` atoms.
    pub fn filter_min_atoms(&self, min_atoms: usize) -> Dataset {
        let mut d = Dataset::from_molecules(self.molecules.iter().filter(|m| m.n() >= min_atoms).cloned().collect());
        d.skipped = self.skipped;
        d
    }

    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }
}

/// Parses one SMILES per line. Blank lines and `#` comments are ignored and
/// only the first whitespace-separated field of a line is read.
pub fn parse_dataset(text: &str) -> Result<Dataset, DatasetError> {
    let mut molecules = Vec::new();
    let mut skipped = 0;
    let mut lines = 0;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        lines += 1;
        let field = line.split_whitespace().next().unwrap_or_default();
        match parse_smiles(field) {
            Ok(m) if m.n() <= MAX_ATOMS && check_validity(&m).valid => molecules.push(m),
            _ => skipped += 1,
        }
    }
    if molecules.is_empty() {
        return Err(DatasetError::AllLinesFailed { lines });
    }
    let mut d = Dataset::from_molecules(molecules);
    d.skipped = skipped;
    Ok(d)
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_and_keys() {
        let d = parse_dataset("CCO\nC\nOCC\n").unwrap();
        assert_eq!(d.size_histogram, BTreeMap::from([(1, 1), (3, 2)]));
        assert_eq!(d.canonical_keys.len(), 2);
        assert_eq!(d.skipped, 0);
    }

    #[test]
    fn skips_bad_lines() {
        let d = parse_dataset("# header\nCCO\nC1CC\n\nCCCCCCCCCC\nC[NH3+]\nCN(=O)=O\n").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.skipped, 4);
    }

    #[test]
    fn all_bad_is_an_error() {
        assert!(matches!(parse_dataset("C1CC\nX\n"), Err(DatasetError::AllLinesFailed { lines: 2 })));
        assert!(matches!(parse_dataset(""), Err(DatasetError::AllLinesFailed { lines: 0 })));
        assert!(matches!(
            load_dataset(Path::new("/nonexistent/file.smi")),
            Err(DatasetError::Unreadable { .. })
        ));
    }
}
