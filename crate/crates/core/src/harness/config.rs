use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Overrides the configured dataset path when set and non-empty.
pub const DATA_ENV: &str = "MOLDIFF_DATA";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
pub enum Experiment {
    #[serde(rename = "gnn_gaussian")]
    #[value(name = "gnn_gaussian")]
    GnnGaussian,
    #[serde(rename = "egnn_gaussian")]
    #[value(name = "egnn_gaussian")]
    EgnnGaussian,
    #[serde(rename = "input_space_gaussian")]
    #[value(name = "input_space_gaussian")]
    InputSpaceGaussian,
    #[serde(rename = "heat_1d")]
    #[value(name = "heat_1d")]
    Heat1d,
    #[serde(rename = "flow_matching")]
    #[value(name = "flow_matching")]
    FlowMatching,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::GnnGaussian,
        Experiment::EgnnGaussian,
        Experiment::InputSpaceGaussian,
        Experiment::Heat1d,
        Experiment::FlowMatching,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::GnnGaussian => "gnn_gaussian",
            Experiment::EgnnGaussian => "egnn_gaussian",
            Experiment::InputSpaceGaussian => "input_space_gaussian",
            Experiment::Heat1d => "heat_1d",
            Experiment::FlowMatching => "flow_matching",
        }
    }

    pub fn from_name(name: &str) -> Option<Experiment> {
        Self::ALL.into_iter().find(|e| e.name() == name)
    }

    /// Stable numeric tag stored in checkpoints.
    pub fn code(self) -> usize {
        Self::ALL.iter().position(|&e| e == self).expect("listed")
    }

    /// Smallest molecule the experiment can train on and generate. Distance
    /// decoders and the edges-as-nodes construction need a pair of atoms.
    pub fn min_atoms(self) -> usize {
        match self {
            Experiment::EgnnGaussian | Experiment::InputSpaceGaussian => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_z() -> usize {
    2
}
fn default_epochs() -> usize {
    20
}
fn default_lr() -> f64 {
    1e-3
}
fn default_dataset() -> PathBuf {
    PathBuf::from("data/qm9_micro.smi")
}
fn default_range() -> [usize; 2] {
    [100, 500]
}
fn default_repetitions() -> usize {
    5
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// One experiment run. Read from a flat JSON object; unknown keys are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "default_z")]
    pub latent_z: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_dataset")]
    pub dataset: PathBuf,
    /// Train on the first `subset` molecules after a seeded shuffle.
    #[serde(default)]
    pub subset: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Fixed number of molecules per generation round; otherwise drawn
    /// uniformly from `sample_range`.
    #[serde(default)]
    pub sample_count: Option<usize>,
    #[serde(default = "default_range")]
    pub sample_range: [usize; 2],
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment, latent_z: usize, seed: u64) -> Self {
        Self {
            experiment,
            latent_z,
            epochs: default_epochs(),
            lr: default_lr(),
            dataset: default_dataset(),
            subset: None,
            seed,
            sample_count: None,
            sample_range: default_range(),
            repetitions: default_repetitions(),
            output: default_output(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
        cfg.validated()
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    /// Checks every field, forcing `latent_z = 1` for the heat experiment.
    pub fn validated(mut self) -> Result<Self, HarnessError> {
        if self.experiment == Experiment::Heat1d {
            self.latent_z = 1;
        }
        let bad = |msg: String| Err(HarnessError::ConfigInvalid(msg));
        if ![1, 2, 6].contains(&self.latent_z) {
            return bad(format!("latent_z must be 1, 2 or 6, got {}", self.latent_z));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.subset == Some(0) {
            return bad("subset must be positive".into());
        }
        if self.sample_count == Some(0) {
            return bad("sample_count must be positive".into());
        }
        let [low, high] = self.sample_range;
        if low == 0 || low > high {
            return bad(format!("sample_range [{low}, {high}] must satisfy 1 <= low <= high"));
        }
        if self.repetitions == 0 {
            return bad("repetitions must be positive".into());
        }
        Ok(self)
    }

    pub fn dataset_path(&self) -> PathBuf {
        match std::env::var_os(DATA_ENV) {
            Some(p) if !p.is_empty() => PathBuf::from(p),
            _ => self.dataset.clone(),
        }
    }

    /// `<experiment>_z<z>`, used for output folders and report rows.
    pub fn label(&self) -> String {
        format!("{}_z{}", self.experiment, self.latent_z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_defaults_and_rejections() {
        let cfg = ExperimentConfig::from_json(r#"{"experiment": "gnn_gaussian", "seed": 3}"#).unwrap();
        assert_eq!(cfg, ExperimentConfig::new(Experiment::GnnGaussian, 2, 3));
        let heat = ExperimentConfig::from_json(r#"{"experiment": "heat_1d", "latent_z": 6}"#).unwrap();
        assert_eq!(heat.latent_z, 1);
        for bad in [
            r#"{"experiment": "gnn_gaussian", "colour": 1}"#,
            r#"{"experiment": "gnn"}"#,
            r#"{"experiment": "gnn_gaussian", "latent_z": 3}"#,
            r#"{"experiment": "gnn_gaussian", "sample_range": [10, 5]}"#,
            r#"{"experiment": "gnn_gaussian", "sample_range": [0, 5]}"#,
            r#"{"experiment": "gnn_gaussian", "lr": -1.0}"#,
            r#"{"experiment": "gnn_gaussian", "epochs": 0}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(bad), Err(HarnessError::ConfigInvalid(_))), "{bad}");
        }
    }

    #[test]
    fn json_round_trip() {
        let mut cfg = ExperimentConfig::new(Experiment::FlowMatching, 6, 9);
        cfg.subset = Some(100);
        cfg.sample_count = Some(50);
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        for e in Experiment::ALL {
            assert_eq!(Experiment::from_name(e.name()), Some(e));
            let json = serde_json::to_string(&e).unwrap();
            assert_eq!(json, format!("\"{}\"", e.name()));
        }
    }
}
