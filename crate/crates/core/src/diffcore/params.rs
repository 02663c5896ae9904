use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::checkpoint::CheckpointEntry;
use super::{DiffError, Tensor};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named trainable tensors owned by one model.
#[derive(Debug)]
pub struct ParamStore {
    id: u64,
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            names: self.names.clone(),
            values: self.values.clone(),
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub(crate) fn id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform `rows × cols` weight.
    pub fn add_weight(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let limit = (6.0 / (rows + cols).max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
        self.add(name, Tensor::matrix(rows, cols, data))
    }

    pub fn add_bias(&mut self, name: impl Into<String>, width: usize) -> ParamId {
        self.add(name, Tensor::zeros(&[width]))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn to_entries(&self) -> Vec<CheckpointEntry> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| CheckpointEntry {
                name: n.clone(),
                tensor: v.clone(),
            })
            .collect()
    }

    /// Overwrites every parameter from `entries`, matching by name. Every
    /// parameter must be present with an identical shape.
    pub fn load_entries(&mut self, entries: &[CheckpointEntry]) -> Result<(), DiffError> {
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let entry = entries
                .iter()
                .find(|e| &e.name == name)
                .ok_or_else(|| DiffError::MissingParameter(name.clone()))?;
            if entry.tensor.shape() != value.shape() {
                return Err(DiffError::ShapeMismatch {
                    op: "load_entries",
                    left: value.shape().to_vec(),
                    right: entry.tensor.shape().to_vec(),
                });
            }
            *value = entry.tensor.clone();
        }
        Ok(())
    }
}
