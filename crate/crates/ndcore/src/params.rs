use std::collections::HashMap;

use rand::Rng;

use crate::error::{NdError, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A named tensor owned by a [`ParamStore`], with its gradient slot.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Frozen parameters enter the tape as constants and never receive gradient.
    pub trainable: bool,
}

/// Ordered collection of named parameters. Insertion order is the canonical
/// order for serialization and optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(NdError::Invalid(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
            trainable,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NdError::UnknownParam(name.to_string()))
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Number of trainable scalar coordinates.
    pub fn trainable_size(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Replaces a parameter's value, keeping its shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(NdError::Shape {
                op: "set_value",
                detail: format!("`{}`: {:?} vs {:?}", p.name, p.value.shape(), value.shape()),
            });
        }
        p.value = value;
        Ok(())
    }
}

/// Uniform Glorot initialisation, `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    uniform(rng, shape, bound)
}

pub fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| lit::<T>(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

/// Glorot matrix with fan-in and fan-out read from a `[rows, cols]` shape.
pub fn glorot_matrix<T: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor<T> {
    glorot_uniform(rng, &[rows, cols], rows, cols)
}
