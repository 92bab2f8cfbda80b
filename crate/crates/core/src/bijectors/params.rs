use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Index of a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Owns every parameter tensor of a model. Layers refer to entries by
/// [`ParamId`] and read them through a [`ParamVars`] binding.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        self.entries.push(ParamEntry { name: name.into(), value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn add_row(&mut self, name: impl Into<String>, values: Vec<f64>, trainable: bool) -> ParamId {
        let n = values.len();
        self.add(name, Array2::from_shape_vec((1, n), values).unwrap(), trainable)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Scalar count over trainable tensors.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    pub fn total_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        (0..self.entries.len()).filter(|&i| self.entries[i].trainable).map(ParamId).collect()
    }

    /// Places every tensor on `tape`: trainable ones as leaves that receive
    /// gradient, the rest as constants.
    pub fn bind(&self, tape: &Tape) -> ParamVars {
        ParamVars {
            vars: self
                .entries
                .iter()
                .map(|e| {
                    if e.trainable {
                        tape.var(e.value.clone())
                    } else {
                        tape.constant(e.value.clone())
                    }
                })
                .collect(),
        }
    }

    /// Every value in storage order, row-major within each tensor.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.value.iter().copied()).collect()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_count() {
            return Err(Error::Shape(format!(
                "parameter vector has {} values, model needs {}",
                flat.len(),
                self.total_count()
            )));
        }
        let mut off = 0;
        for e in &mut self.entries {
            let n = e.value.len();
            for (dst, src) in e.value.iter_mut().zip(&flat[off..off + n]) {
                *dst = *src;
            }
            off += n;
        }
        Ok(())
    }
}

/// A [`ParamStore`] bound to a tape.
#[derive(Clone)]
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn get(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }

    pub fn all(&self) -> &[Var] {
        &self.vars
    }

    /// Overrides one binding (used to inject fixed values in tests).
    pub fn replace(&mut self, id: ParamId, v: Var) {
        self.vars[id.0] = v;
    }
}
