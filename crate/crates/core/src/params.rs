//! Named parameter arrays, their gradients, and initialization.

use std::collections::HashMap;

use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Ix1, Ix2, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Handle into a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: ArrayD<T>,
    pub trainable: bool,
}

/// Ordered collection of uniquely named arrays. Frozen arrays are never
/// touched by the optimizer.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            trainable: true,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.params[id.0].value
    }

    pub fn matrix(&self, id: ParamId) -> ArrayView2<'_, T> {
        self.params[id.0]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("parameter is a matrix")
    }

    pub fn vector(&self, id: ParamId) -> ArrayView1<'_, T> {
        self.params[id.0]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("parameter is a vector")
    }

    pub fn matrix_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, T> {
        self.params[id.0]
            .value
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("parameter is a matrix")
    }

    pub fn vector_mut(&mut self, id: ParamId) -> ArrayViewMut1<'_, T> {
        self.params[id.0]
            .value
            .view_mut()
            .into_dimensionality::<Ix1>()
            .expect("parameter is a vector")
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    pub fn set_param_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.value.iter() {
                h.update(v.to_f64().unwrap().to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replace the value of an existing parameter, checking the shape.
    pub fn assign(&mut self, name: &str, value: ArrayD<T>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }
}

/// Gradient buffers parallel to a [`ParameterStore`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<ArrayD<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(store: &ParameterStore<T>) -> Self {
        Self {
            grads: store
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<T> {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.grads[id.0]
    }

    pub fn matrix_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, T> {
        self.grads[id.0]
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("gradient is a matrix")
    }

    pub fn vector_mut(&mut self, id: ParamId) -> ArrayViewMut1<'_, T> {
        self.grads[id.0]
            .view_mut()
            .into_dimensionality::<Ix1>()
            .expect("gradient is a vector")
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.fill(T::zero());
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in &mut self.grads {
            g.mapv_inplace(|v| v * s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> T {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }
}

/// Registers parameters under a dotted name prefix and initializes them.
pub struct ParamBuilder<'a, T, R> {
    store: &'a mut ParameterStore<T>,
    rng: &'a mut R,
    prefix: String,
}

impl<'a, T: Real, R: Rng> ParamBuilder<'a, T, R> {
    pub fn new(store: &'a mut ParameterStore<T>, rng: &'a mut R) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scope(&mut self, name: &str) -> ParamBuilder<'_, T, R> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let rng = &mut *self.rng;
        let value = ArrayD::from_shape_simple_fn(IxDyn(shape), || T::lit(dist.sample(rng)));
        let full = self.full_name(name);
        self.store.insert(full, value)
    }

    /// Zero-mean normal with variance `1 / fan_in`.
    pub fn fan_in(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        self.normal(name, shape, 1.0 / (fan_in.max(1) as f64).sqrt())
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        let full = self.full_name(name);
        self.store
            .insert(full, ArrayD::from_elem(IxDyn(shape), T::lit(value)))
    }
}
