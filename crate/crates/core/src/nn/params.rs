use std::collections::HashMap;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{invalid, shape, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform init on `[-bound, bound]`.
    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut impl Rng) -> ParamId {
        let mut t = Tensor::zeros(shape);
        if bound > 0.0 {
            for v in t.data_mut() {
                *v = rng.gen_range(-bound..=bound);
            }
        }
        self.add(name, t)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces every tensor from `(name, tensor)` pairs; names and shapes
    /// must match the existing layout exactly.
    pub fn load(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.tensors.len() {
            return Err(invalid(format!(
                "expected {} parameter tensors, found {}",
                self.tensors.len(),
                entries.len()
            )));
        }
        for (name, t) in entries {
            let i = *self
                .index
                .get(&name)
                .ok_or_else(|| invalid(format!("unknown parameter {name}")))?;
            if t.shape() != self.tensors[i].shape() {
                return Err(shape(format!(
                    "parameter {name}: expected {:?}, found {:?}",
                    self.tensors[i].shape(),
                    t.shape()
                )));
            }
            self.tensors[i] = t;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_and_load() {
        let mut s = ParamStore::new();
        let mut rng = crate::seed::rng(1);
        let a = s.uniform("a", &[2, 3], 0.5, &mut rng);
        let b = s.zeros("b", &[3]);
        assert_eq!(s.id("b"), Some(b));
        assert_eq!(s.numel(), 9);
        assert!(s.get(a).data().iter().all(|v| v.abs() <= 0.5));
        let mut t = s.clone();
        t.load(vec![
            ("b".into(), Tensor::full(&[3], 1.0)),
            ("a".into(), Tensor::zeros(&[2, 3])),
        ])
        .unwrap();
        assert_eq!(t.get(b).data(), &[1.0; 3]);
        assert!(t
            .load(vec![
                ("a".into(), Tensor::zeros(&[3, 2])),
                ("b".into(), Tensor::zeros(&[3]))
            ])
            .is_err());
    }
}
