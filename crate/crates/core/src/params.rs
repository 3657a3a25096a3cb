//! Named trainable tensors and their accumulated gradients.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Running statistics are stored here too but are never touched by the optimizer.
    pub trainable: bool,
    version: u64,
}

impl<T: Scalar> Parameter<T> {
    pub fn version(&self) -> u64 {
        self.version
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(invalid(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.clone(),
            value,
            grad,
            trainable,
            version: 0,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    /// Xavier-uniform initialised weight.
    pub fn add_xavier<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: Shape,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.add(name, Tensor::rand_uniform(shape, -a, a, rng), true)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    /// Mutable access to a value; invalidates graphs recorded before the call.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        let p = &mut self.params[id.0];
        p.version += 1;
        &mut p.value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        self.params[id.0].value.expect_shape(value.shape(), "set_value")?;
        *self.value_mut(id) = value;
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub fn set_grad(&mut self, id: ParamId, grad: Tensor<T>) -> Result<()> {
        self.params[id.0].grad.expect_shape(grad.shape(), "set_grad")?;
        self.params[id.0].grad = grad;
        Ok(())
    }

    pub(crate) fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].grad
    }

    pub fn version(&self, id: ParamId) -> u64 {
        self.params[id.0].version
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Euclidean norm of the gradients of parameters whose name starts with `prefix`.
    pub fn grad_norm(&self, prefix: &str) -> T {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .flat_map(|p| p.grad.data().iter())
            .fold(T::zero(), |a, &g| a + g * g)
            .sqrt()
    }

    /// Same parameters, converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    trainable: p.trainable,
                    version: p.version,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}
