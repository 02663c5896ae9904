use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::chem::{canonical_key, check_validity, parse_smiles, Dataset, MolGraph};

/// Percentages for one batch of generated candidates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub count: usize,
    pub valid: usize,
    pub validity: f64,
    /// Distinct valid molecules over valid molecules.
    pub uniqueness: f64,
    /// Distinct valid molecules absent from training over distinct valid
    /// molecules.
    pub novelty: f64,
    /// Set when no candidate was valid; uniqueness and novelty are then 0.
    pub nothing_valid: bool,
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn score<'a>(count: usize, graphs: impl Iterator<Item = &'a MolGraph>, training: &Dataset) -> Result<Scores, HarnessError> {
    if count == 0 {
        return Err(HarnessError::EmptyCandidateSet);
    }
    let mut valid = 0;
    let mut distinct = HashSet::new();
    for g in graphs {
        if check_validity(g).valid {
            valid += 1;
            distinct.insert(canonical_key(g));
        }
    }
    let novel = distinct.iter().filter(|k| !training.canonical_keys.contains(*k)).count();
    Ok(Scores {
        count,
        valid,
        validity: percent(valid, count),
        uniqueness: percent(distinct.len(), valid),
        novelty: percent(novel, distinct.len()),
        nothing_valid: valid == 0,
    })
}

pub fn evaluate(candidates: &[MolGraph], training: &Dataset) -> Result<Scores, HarnessError> {
    score(candidates.len(), candidates.iter(), training)
}

/// Scores SMILES lines; lines that fail to parse count as invalid
/// candidates.
pub fn evaluate_smiles<S: AsRef<str>>(lines: &[S], training: &Dataset) -> Result<Scores, HarnessError> {
    let parsed: Vec<MolGraph> = lines.iter().filter_map(|l| parse_smiles(l.as_ref().trim()).ok()).collect();
    score(lines.len(), parsed.iter(), training)
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub latent_z: usize,
    pub validity: f64,
    pub uniqueness: f64,
    pub novelty: f64,
    pub ae_seconds: f64,
    pub flow_seconds: f64,
    pub params: usize,
    /// Candidates generated across all repetitions.
    pub count: usize,
}

impl MetricsReport {
    /// Means of the percentages over repetitions.
    pub fn from_rounds(experiment: &str, latent_z: usize, ae_seconds: f64, flow_seconds: f64, params: usize, rounds: &[Scores]) -> Self {
        let n = rounds.len().max(1) as f64;
        let mean = |f: fn(&Scores) -> f64| rounds.iter().map(f).sum::<f64>() / n;
        Self {
            experiment: experiment.to_string(),
            latent_z,
            validity: mean(|s| s.validity),
            uniqueness: mean(|s| s.uniqueness),
            novelty: mean(|s| s.novelty),
            ae_seconds,
            flow_seconds,
            params,
            count: rounds.iter().map(|s| s.count).sum(),
        }
    }

    pub fn nothing_valid(&self) -> bool {
        self.validity == 0.0
    }
}
