use indexmap::IndexMap;

use super::AutodiffError;
use crate::linalg::Matrix;

/// Position of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, iterated in insertion order.
///
/// Vectors (biases) are stored as `1 × n` matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: IndexMap<String, Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new tensor. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        if !value.is_finite() {
            return Err(AutodiffError::NonFiniteParam(name));
        }
        let (idx, _) = self.tensors.insert_full(name, value);
        Ok(ParamId(idx))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.tensors.get_index_of(name).map(ParamId)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.tensors.get_index(id.0).map(|(k, _)| k.as_str()).expect("valid param id")
    }

    /// Replaces the value of an existing tensor, keeping its shape fixed.
    pub fn set(&mut self, name: &str, value: Matrix) -> Result<(), AutodiffError> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(AutodiffError::ShapeMismatch {
                name: name.to_string(),
                expected: slot.shape(),
                got: value.shape(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub(crate) fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(|m| m.as_slice().len()).sum()
    }

    /// Zero-valued tensors with the same names and shapes.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Matrix::zeros(v.rows(), v.cols())))
                .collect(),
        }
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }
}

/// Gradients keyed exactly like the [`ParamSet`] they were taken against.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSet {
    grads: ParamSet,
}

impl GradSet {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            grads: params.zeros_like(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.grads.get(name)
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        self.grads.value(id)
    }

    pub(crate) fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        self.grads.value_mut(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.grads.iter()
    }

    pub fn as_params(&self) -> &ParamSet {
        &self.grads
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|(_, m)| m.is_finite())
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|(_, m)| m.as_slice().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}
