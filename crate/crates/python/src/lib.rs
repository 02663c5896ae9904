//! Python bindings for the `moldiff` library.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use moldiff::chem::{canonical_key, check_validity, parse_dataset, parse_smiles, write_smiles, Dataset};
use moldiff::diffcore::Tensor;
use moldiff::flows::{heat_blur as blur, DdpmSchedule};
use moldiff::harness::{
    evaluate_smiles, generate_molecules, prepare_dataset, run_experiment as run, ExperimentConfig, Pipeline,
};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn training_set(lines: &[String]) -> PyResult<Dataset> {
    parse_dataset(&lines.join("\n")).map_err(value_error)
}

/// Re-writes a SMILES string in the library's own output form.
#[pyfunction]
pub fn normalize_smiles(smiles: &str) -> PyResult<String> {
    parse_smiles(smiles).map(|m| write_smiles(&m)).map_err(value_error)
}

/// Whether the SMILES parses and passes the valence and connectivity rules.
#[pyfunction]
pub fn is_valid(smiles: &str) -> bool {
    parse_smiles(smiles).is_ok_and(|m| check_validity(&m).valid)
}

/// Rule violations of a parsed molecule; empty for a valid one.
#[pyfunction]
pub fn violations(smiles: &str) -> PyResult<Vec<String>> {
    let m = parse_smiles(smiles).map_err(value_error)?;
    Ok(check_validity(&m).violations)
}

/// True when both strings describe the same molecular graph.
#[pyfunction]
pub fn same_molecule(a: &str, b: &str) -> PyResult<bool> {
    let a = parse_smiles(a).map_err(value_error)?;
    let b = parse_smiles(b).map_err(value_error)?;
    Ok(canonical_key(&a) == canonical_key(&b))
}

/// Validity, uniqueness and novelty percentages of `candidates` against the
/// `training` SMILES.
#[pyfunction]
pub fn score(candidates: Vec<String>, training: Vec<String>) -> PyResult<HashMap<String, f64>> {
    let s = evaluate_smiles(&candidates, &training_set(&training)?).map_err(value_error)?;
    Ok(HashMap::from([
        ("count".to_string(), s.count as f64),
        ("valid".to_string(), s.valid as f64),
        ("validity".to_string(), s.validity),
        ("uniqueness".to_string(), s.uniqueness),
        ("novelty".to_string(), s.novelty),
    ]))
}

/// Gaussian blur of a vector in the cosine-transform domain.
#[pyfunction]
pub fn heat_blur(values: Vec<f64>, sigma: f64) -> PyResult<Vec<f64>> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(value_error("sigma must be finite and non-negative"));
    }
    Ok(blur(&Tensor::vector(values), sigma).map_err(value_error)?.data().to_vec())
}

/// `ᾱ_t` for `t = 0..=T` of the denoising schedule.
#[pyfunction]
pub fn alpha_bars() -> Vec<f64> {
    let s = DdpmSchedule::standard();
    (0..=s.steps()).map(|t| s.alpha_bar(t)).collect()
}

/// Trains, samples and scores one experiment described by a JSON config;
/// returns the averaged metrics.
#[pyfunction]
pub fn run_experiment(config_json: &str) -> PyResult<HashMap<String, f64>> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(value_error)?;
    let (r, _) = run(&cfg).map_err(value_error)?;
    Ok(HashMap::from([
        ("latent_z".to_string(), r.latent_z as f64),
        ("validity".to_string(), r.validity),
        ("uniqueness".to_string(), r.uniqueness),
        ("novelty".to_string(), r.novelty),
        ("ae_seconds".to_string(), r.ae_seconds),
        ("flow_seconds".to_string(), r.flow_seconds),
        ("params".to_string(), r.params as f64),
        ("count".to_string(), r.count as f64),
    ]))
}

/// A trained pipeline together with its training molecules.
#[pyclass(unsendable)]
pub struct Model {
    pipeline: Pipeline,
    training: Dataset,
}

#[pymethods]
impl Model {
    /// Loads `checkpoint` (default `<output>/model.mdl`) for the JSON config.
    #[staticmethod]
    #[pyo3(signature = (config_json, checkpoint=None))]
    pub fn load(config_json: &str, checkpoint: Option<PathBuf>) -> PyResult<Self> {
        let cfg = ExperimentConfig::from_json(config_json).map_err(value_error)?;
        let path = checkpoint.unwrap_or_else(|| cfg.output.join("model.mdl"));
        let pipeline = Pipeline::load(&cfg, &path).map_err(value_error)?;
        let training = prepare_dataset(&cfg).map_err(value_error)?;
        Ok(Self { pipeline, training })
    }

    #[getter]
    pub fn parameter_count(&self) -> usize {
        self.pipeline.param_count()
    }

    /// `count` generated molecules as SMILES.
    pub fn generate(&self, count: usize, seed: u64) -> PyResult<Vec<String>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mols = generate_molecules(&self.pipeline, &self.training, count, &mut rng).map_err(value_error)?;
        Ok(mols.iter().map(write_smiles).collect())
    }
}

#[pymodule]
fn pymoldiff(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(normalize_smiles, m)?)?;
    m.add_function(wrap_pyfunction!(is_valid, m)?)?;
    m.add_function(wrap_pyfunction!(violations, m)?)?;
    m.add_function(wrap_pyfunction!(same_molecule, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(heat_blur, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_bars, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
