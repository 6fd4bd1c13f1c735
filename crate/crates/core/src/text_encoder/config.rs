use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the text transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub context_length: usize,
    /// Output feature width `d`.
    pub projection_dim: usize,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
}

fn default_ln_eps() -> f64 {
    1e-5
}

impl EncoderConfig {
    /// Small configuration used throughout the test suites.
    pub fn toy() -> Self {
        Self {
            num_layers: 2,
            d_model: 16,
            num_heads: 2,
            mlp_ratio: 2.0,
            context_length: 16,
            projection_dim: 8,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn mlp_width(&self) -> usize {
        ((self.d_model as f64) * self.mlp_ratio).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.num_heads == 0 || self.projection_dim == 0 {
            return Err(Error::invalid("d_model, num_heads and projection_dim must be positive"));
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return Err(Error::invalid(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.context_length < 2 {
            return Err(Error::invalid("context_length must be at least 2"));
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_width() == 0 {
            return Err(Error::invalid("mlp_ratio must be positive"));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::invalid("layer_norm_eps must be positive"));
        }
        Ok(())
    }
}
