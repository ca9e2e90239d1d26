use indexmap::IndexMap;

use crate::error::{DiffError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A named tensor plus its Adam moment buffers.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub first_moment: Tensor<T>,
    pub second_moment: Tensor<T>,
    /// Batchnorm running statistics are stored here but never optimized.
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>, trainable: bool) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value,
            first_moment: Tensor::zeros(&shape),
            second_moment: Tensor::zeros(&shape),
            trainable,
        }
    }
}

/// Gradients keyed by parameter name.
pub type Gradients<T> = IndexMap<String, Tensor<T>>;

/// Adds `other` into `acc`, inserting missing entries.
pub fn accumulate<T: Scalar>(acc: &mut Gradients<T>, other: Gradients<T>) {
    for (name, g) in other {
        match acc.get_mut(&name) {
            Some(existing) => existing.add_assign(&g),
            None => {
                acc.insert(name, g);
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParameterSet<T> {
    params: IndexMap<String, Param<T>>,
    /// Number of optimizer steps applied so far.
    pub step: u64,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) {
        self.params.insert(name.into(), Param::new(value, trainable));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| DiffError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| DiffError::MissingParam(name.to_string()))
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<T>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Converts values and moments to another precision.
    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            first_moment: p.first_moment.cast(),
                            second_moment: p.second_moment.cast(),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
            step: self.step,
        }
    }

    /// Moves every entry of `other` into `self`.
    pub fn extend(&mut self, other: ParameterSet<T>) {
        self.params.extend(other.params);
    }

    /// Zero gradients with the shape of every trainable parameter.
    pub fn zero_gradients(&self) -> Gradients<T> {
        self.params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(k, p)| (k.clone(), Tensor::zeros(p.value.shape())))
            .collect()
    }
}
