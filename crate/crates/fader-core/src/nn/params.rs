//! Named collections of trainable arrays.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Ordered map from parameter name to tensor.
///
/// Names are unique, shapes are fixed at insertion, and values must be
/// finite. Insertion order is preserved; it defines the layout of the
/// checkpoint sidecar. The same type doubles as a gradient container,
/// since gradients share names and shapes with their parameters.
#[derive(Clone, Debug, Default)]
pub struct ParameterSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        if !tensor.is_finite() {
            return Err(Error::Numeric(format!("parameter '{name}' contains non-finite values")));
        }
        self.index.insert(name.to_string(), self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
    }

    /// Overwrite the values of an existing entry. The shape is immutable.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))?;
        if self.tensors[i].shape() != tensor.shape() {
            return Err(Error::Dimension(format!(
                "parameter '{}' has shape {:?}; cannot assign {:?}",
                name,
                self.tensors[i].shape(),
                tensor.shape()
            )));
        }
        self.tensors[i] = tensor;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    /// Mutable access for in-place updates (optimizer steps).
    pub fn values_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))?;
        Ok(self.tensors[i].data_mut())
    }

    /// A set with the same names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParameterSet {
        let mut out = ParameterSet::new();
        for (name, t) in self.iter() {
            out.insert(name, Tensor::zeros(t.rows(), t.cols())).expect("names unique");
        }
        out
    }

    /// True when every entry matches `other` bit for bit.
    pub fn bit_eq(&self, other: &ParameterSet) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(other.tensors.iter())
                .all(|(a, b)| a.bit_eq(b))
    }

    /// Checks name-by-name shape agreement, e.g. gradients against parameters.
    pub fn conforms_to(&self, other: &ParameterSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Dimension("parameter sets have different entries".into()));
        }
        for ((name, a), (_, b)) in self.iter().zip(other.iter()) {
            if a.shape() != b.shape() {
                return Err(Error::Dimension(format!(
                    "parameter '{}' shape {:?} does not match {:?}",
                    name,
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::zeros(2, 2)).unwrap();
        assert!(p.insert("w", Tensor::zeros(1, 1)).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let mut p = ParameterSet::new();
        let t = Tensor::new(1, 2, vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(p.insert("w", t), Err(Error::Numeric(_))));
    }

    #[test]
    fn shapes_immutable_after_creation() {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::zeros(2, 3)).unwrap();
        assert!(p.set("w", Tensor::zeros(3, 2)).is_err());
        assert!(p.set("w", Tensor::new(2, 3, vec![1.0; 6]).unwrap()).is_ok());
    }

    #[test]
    fn insertion_order_preserved() {
        let mut p = ParameterSet::new();
        p.insert("b", Tensor::zeros(1, 1)).unwrap();
        p.insert("a", Tensor::zeros(1, 1)).unwrap();
        let names: Vec<&str> = p.names().collect();
        assert_eq!(names, vec!["b", "a"]);
    }
}
