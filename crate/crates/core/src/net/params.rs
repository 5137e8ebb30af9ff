use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A trainable matrix together with its gradient buffer.
///
/// Vectors (biases) are stored as `1 × n` matrices so every entry shares one
/// shape convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param { value, grad }
    }
}

/// Named parameters of every sub-network, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<String, Param>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.entries.insert(name.into(), Param::new(value));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Array2<f64>> {
        Ok(&self.get(name)?.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Array2<f64>> {
        Ok(&mut self.get_mut(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Array2<f64>> {
        Ok(&self.get(name)?.grad)
    }

    /// Adds `delta` into the gradient buffer of `name`.
    pub fn accumulate_grad(&mut self, name: &str, delta: &Array2<f64>) -> Result<()> {
        let param = self.get_mut(name)?;
        if param.grad.dim() != delta.dim() {
            return Err(Error::dim(
                format!("gradient of {name}"),
                format!("{:?}", param.grad.dim()),
                format!("{:?}", delta.dim()),
            ));
        }
        param.grad += delta;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    /// Copies values (not gradients) out as plain tensors for serialization.
    pub fn to_tensors(&self) -> BTreeMap<String, NamedTensor> {
        self.entries
            .iter()
            .map(|(k, p)| {
                let (r, c) = p.value.dim();
                let data = p.value.iter().copied().collect();
                (k.clone(), NamedTensor { shape: [r, c], data })
            })
            .collect()
    }

    pub fn from_tensors(tensors: BTreeMap<String, NamedTensor>) -> Result<Self> {
        let mut store = ParameterStore::new();
        for (name, t) in tensors {
            let value = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data)
                .map_err(|e| Error::Corrupt(format!("parameter `{name}`: {e}")))?;
            store.insert(name, value);
        }
        Ok(store)
    }
}

/// Row-major dense tensor with explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Kaiming-uniform initialization for relu layers: U(-b, b), b = sqrt(6 / fan_in).
pub fn kaiming_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    uniform(fan_in, fan_out, bound, rng)
}

/// Xavier-uniform initialization: U(-b, b), b = sqrt(6 / (fan_in + fan_out)).
pub fn xavier_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    uniform(fan_in, fan_out, bound, rng)
}

fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Array2<f64> {
    // Filled in row-major order so the draw sequence is stable.
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data length")
}
