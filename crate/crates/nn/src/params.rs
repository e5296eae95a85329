use std::collections::HashMap;

use crate::element::Element;
use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Element = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    by_name: HashMap<String, usize>,
}

/// Graph handles for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps handles created elsewhere, e.g. by a gradient check. They must
    /// follow the store's parameter order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(NnError::Validation(format!("duplicate parameter name {name}")));
        }
        self.by_name.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Places every parameter on `graph` as a trainable leaf.
    pub fn bind(&self, graph: &Graph<T>) -> Result<Bound> {
        let vars = self
            .tensors
            .iter()
            .map(|t| graph.param(t.clone()))
            .collect::<Result<_>>()?;
        Ok(Bound { vars })
    }

    /// Same as [`bind`](Self::bind) but the leaves are constants, so no
    /// gradient is computed for them.
    pub fn bind_frozen(&self, graph: &Graph<T>) -> Result<Bound> {
        let vars = self
            .tensors
            .iter()
            .map(|t| graph.constant(t.clone()))
            .collect::<Result<_>>()?;
        Ok(Bound { vars })
    }

    /// Copies values from `other` by name; every name must exist in both with
    /// the same shape.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(NnError::Checkpoint(format!(
                "parameter count {} does not match model ({})",
                other.len(),
                self.len()
            )));
        }
        for (name, t) in other.names.iter().zip(&other.tensors) {
            let id = self
                .id(name)
                .ok_or_else(|| NnError::Checkpoint(format!("unknown parameter {name}")))?;
            let dst = &mut self.tensors[id.0];
            if dst.shape() != t.shape() {
                return Err(NnError::Checkpoint(format!(
                    "parameter {name}: checkpoint shape {:?} vs model {:?}",
                    t.shape(),
                    dst.shape()
                )));
            }
            *dst = t.clone();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}
