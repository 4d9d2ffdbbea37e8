use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// A named trainable tensor and its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    /// Clamped to `>= 0` after every optimizer step (thresholds).
    pub nonneg: bool,
}

/// Ordered collection of named parameters. Iteration follows insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F> {
    entries: IndexMap<String, Param<F>>,
    grads_ready: bool,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
            grads_ready: false,
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<F>, nonneg: bool) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::InvalidParameter(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        if nonneg && value.data().iter().any(|&v| v < F::zero()) {
            return Err(Error::InvalidParameter(format!(
                "parameter `{name}` must be nonnegative"
            )));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(
            name.to_string(),
            Param {
                value,
                grad,
                nonneg,
            },
        );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.entries
            .get_index_of(name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown parameter `{name}`")))
    }

    pub fn get(&self, name: &str) -> Result<&Param<F>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<F>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<F>> {
        Ok(&self.get(name)?.value)
    }

    pub fn by_index(&self, i: usize) -> (&str, &Param<F>) {
        let (k, v) = self.entries.get_index(i).expect("index in range");
        (k.as_str(), v)
    }

    pub(crate) fn by_index_mut(&mut self, i: usize) -> &mut Param<F> {
        self.entries.get_index_mut(i).expect("index in range").1
    }

    /// Replaces a value, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor<F>) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<F>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Zeroes every gradient and marks them as not yet computed.
    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(F::zero());
        }
        self.grads_ready = false;
    }

    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    /// Declares the gradient buffers populated (set by the backward pass).
    pub fn mark_grads_ready(&mut self) {
        self.grads_ready = true;
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            grad: p.grad.cast(),
                            nonneg: p.nonneg,
                        },
                    )
                })
                .collect(),
            grads_ready: self.grads_ready,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut s = ParamStore::<f64>::new();
        s.insert("b", Tensor::zeros(&[2]), false).unwrap();
        s.insert("a", Tensor::scalar(0.1), true).unwrap();
        assert!(s.insert("b", Tensor::zeros(&[1]), false).is_err());
        assert_eq!(s.names().collect::<Vec<_>>(), vec!["b", "a"]);
        assert_eq!(s.get("a").unwrap().grad.shape(), &[] as &[usize]);
    }

    #[test]
    fn nonneg_rejects_negative_values() {
        let mut s = ParamStore::<f64>::new();
        assert!(s.insert("mu", Tensor::scalar(-0.1), true).is_err());
    }

    #[test]
    fn set_value_keeps_shape() {
        let mut s = ParamStore::<f64>::new();
        s.insert("w", Tensor::zeros(&[2, 2]), false).unwrap();
        assert!(s.set_value("w", Tensor::zeros(&[4])).is_err());
        s.set_value("w", Tensor::identity(2)).unwrap();
        assert_eq!(s.value("w").unwrap().at2(1, 1), 1.0);
    }
}
