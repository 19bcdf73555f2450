use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use crate::{AutodiffError, Result};

/// Named parameter tensors. Serialises as a JSON map
/// `name -> {"shape": [...], "values": [...]}` with row-major values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

/// Graph handles for every entry of a [`ParamStore`].
pub type ParamVars = BTreeMap<String, Var>;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Records every tensor as a trainable leaf on `g`.
    pub fn register(&self, g: &mut Graph) -> ParamVars {
        self.tensors
            .iter()
            .map(|(name, t)| (name.clone(), g.param(t.clone())))
            .collect()
    }

    /// Reads the gradients of registered parameters after `backward`.
    /// Parameters the loss does not depend on get zero gradients.
    pub fn gradients(&self, g: &Graph, vars: &ParamVars) -> ParamStore {
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let grad = vars
                    .get(name)
                    .and_then(|&v| g.grad(v))
                    .unwrap_or_else(|| Tensor::zeros(t.shape()));
                (name.clone(), grad)
            })
            .collect();
        ParamStore { tensors }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .values()
            .map(Tensor::l2_norm_sq)
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let store: ParamStore = serde_json::from_str(text)?;
        for (name, t) in &store.tensors {
            let expected: usize = t.shape().iter().product();
            if expected != t.len() {
                return Err(AutodiffError::Checkpoint(format!(
                    "parameter {name}: shape {:?} does not match {} values",
                    t.shape(),
                    t.len()
                )));
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
