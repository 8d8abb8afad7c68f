use std::collections::HashMap;
use std::ops::Index;

use crate::error::{AutodiffError, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Named model parameters in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        self.add_with(name, tensor, true)
    }

    pub fn add_with(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor,
        trainable: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            tensor,
            trainable,
        });
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Replace the tensor for `name`, keeping its shape contract.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let id = self.id(name)?;
        let slot = &mut self.params[id.0].tensor;
        if slot.shape() != tensor.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "ParamStore::set",
                lhs: slot.shape().to_vec(),
                rhs: tensor.shape().to_vec(),
            });
        }
        *slot = tensor;
        Ok(())
    }
}

/// Tape variables for every parameter of a store, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub(crate) vars: Vec<Var>,
}

impl Index<ParamId> for BoundParams {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            tensors: store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.tensor.shape()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale_in_place(s));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_shapes_fixed() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::zeros(&[2, 3])).unwrap();
        assert_eq!(s.id("w").unwrap(), id);
        assert!(matches!(s.add("w", Tensor::zeros(&[1])), Err(AutodiffError::DuplicateParameter(_))));
        assert!(matches!(s.id("v"), Err(AutodiffError::UnknownParameter(_))));
        assert!(s.set("w", Tensor::zeros(&[3, 2])).is_err());
        s.set("w", Tensor::filled(&[2, 3], 1.0)).unwrap();
        assert_eq!(s.num_values(), 6);
    }

    #[test]
    fn gradients_accumulate_and_scale() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::zeros(&[2])).unwrap();
        let mut g = Gradients::zeros_like(&s);
        let mut one = g.clone();
        one.tensors[0] = Tensor::vector(vec![1.0, 2.0]);
        g.accumulate(&one);
        g.accumulate(&one);
        g.scale(0.5);
        assert_eq!(g.tensors()[0].data(), &[1.0, 2.0]);
        assert!(g.is_finite());
    }
}
