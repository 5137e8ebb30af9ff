//! Minimal differentiable-network substrate: dense layers, a single
//! self-attention encoder block, hand-written backward passes, SGD and a
//! finite-difference gradient checker.

mod dense;
mod encoder;
mod gradcheck;
mod optim;
mod params;

pub use dense::{dense_backward, dense_forward, sigmoid, Activation, Dense, DenseCache};
pub use encoder::{encoder_forward, softmax_rows, softmax_rows_backward, EncoderBlock, EncoderCache};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, FD_EPSILON};
pub use optim::sgd_update;
pub use params::{kaiming_uniform, xavier_uniform, NamedTensor, Param, ParameterStore};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) const ENCODER_PREFIX: &str = "repr.encoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub token_dim: usize,
    pub n_heads: usize,
    pub use_encoder: bool,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            token_dim: 16,
            n_heads: 2,
            use_encoder: true,
        }
    }
}

/// Network shape shared by every sub-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub encoder: EncoderSpec,
    /// Hidden-layer activation of the MLP blocks.
    pub activation: Activation,
}

impl NetSpec {
    pub fn new(input_dim: usize, hidden_dim: usize) -> Self {
        NetSpec {
            input_dim,
            hidden_dim,
            encoder: EncoderSpec::default(),
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be > 0".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be > 0".into()));
        }
        if self.encoder.use_encoder {
            let e = &self.encoder;
            if e.token_dim == 0 || e.n_heads == 0 || !e.token_dim.is_multiple_of(e.n_heads) {
                return Err(Error::Config(format!(
                    "token_dim ({}) must be a positive multiple of n_heads ({})",
                    e.token_dim, e.n_heads
                )));
            }
        }
        Ok(())
    }
}
