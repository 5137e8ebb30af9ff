use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{kaiming_uniform, xavier_uniform, ParameterStore};
use crate::error::{Error, Result};

/// Elementwise nonlinearity applied after the affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => out * (1.0 - out),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer `activation(input · W + b)`.
///
/// Weights live in the shared [`ParameterStore`] under `<name>.weight`
/// (`in × out`) and `<name>.bias` (`1 × out`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// Activations retained by [`Dense::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    pub layer: String,
    pub input: Array2<f64>,
    pub pre: Array2<f64>,
    pub output: Array2<f64>,
}

impl Dense {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Dense {
            name: name.into(),
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// Registers freshly initialized weights and a zero bias.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParameterStore, rng: &mut R) {
        let w = match self.activation {
            Activation::Relu => kaiming_uniform(self.in_dim, self.out_dim, rng),
            _ => xavier_uniform(self.in_dim, self.out_dim, rng),
        };
        params.insert(self.weight_name(), w);
        params.insert(self.bias_name(), Array2::zeros((1, self.out_dim)));
    }

    pub fn forward(&self, params: &ParameterStore, input: ArrayView2<f64>) -> Result<(Array2<f64>, DenseCache)> {
        let w = params.value(&self.weight_name())?;
        let b = params.value(&self.bias_name())?;
        if input.ncols() != w.nrows() {
            return Err(Error::dim(
                format!("layer {} input", self.name),
                w.nrows(),
                input.ncols(),
            ));
        }
        let pre = input.dot(w) + b;
        let act = self.activation;
        let output = pre.mapv(|v| act.apply(v));
        let cache = DenseCache {
            layer: self.name.clone(),
            input: input.to_owned(),
            pre,
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Accumulates weight and bias gradients and returns the gradient with
    /// respect to the layer input.
    pub fn backward(
        &self,
        params: &mut ParameterStore,
        cache: &DenseCache,
        grad_out: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        if cache.layer != self.name {
            return Err(Error::Contract(format!(
                "cache from layer `{}` passed to `{}`",
                cache.layer, self.name
            )));
        }
        if grad_out.dim() != cache.pre.dim() || cache.input.ncols() != self.in_dim {
            return Err(Error::Contract(format!(
                "stale cache for layer `{}`: cached {:?}, gradient {:?}",
                self.name,
                cache.pre.dim(),
                grad_out.dim()
            )));
        }
        let act = self.activation;
        let mut delta = grad_out.to_owned();
        ndarray::Zip::from(&mut delta)
            .and(&cache.pre)
            .and(&cache.output)
            .for_each(|d, &p, &o| *d *= act.derivative(p, o));

        let grad_w = cache.input.t().dot(&delta);
        let grad_b = delta.sum_axis(Axis(0)).insert_axis(Axis(0));
        params.accumulate_grad(&self.weight_name(), &grad_w)?;
        params.accumulate_grad(&self.bias_name(), &grad_b)?;
        let w = params.value(&self.weight_name())?;
        Ok(delta.dot(&w.t()))
    }
}

/// Free-function form of [`Dense::forward`].
pub fn dense_forward(
    params: &ParameterStore,
    layer: &Dense,
    input: ArrayView2<f64>,
) -> Result<(Array2<f64>, DenseCache)> {
    layer.forward(params, input)
}

/// Free-function form of [`Dense::backward`].
pub fn dense_backward(
    params: &mut ParameterStore,
    layer: &Dense,
    cache: &DenseCache,
    grad_out: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    layer.backward(params, cache, grad_out)
}
