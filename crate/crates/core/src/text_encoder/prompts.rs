use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::{word_ids, Vocabulary};
use super::weights::EncoderWeights;
use crate::error::{Error, Result};
use crate::numerics::{GradientMap, ParameterSet, Tensor};

/// Standard deviation of randomly initialized prompt rows.
pub const PROMPT_INIT_STD: f64 = 0.02;

pub const DEFAULT_INIT_TEXT: &str = "a photo of a";

/// Learnable deep language prompts: `depth` tensors of shape `[length, d_model]`.
///
/// Layer 0 is spliced in after SOS; layer `j >= 1` replaces the prompt rows
/// at the input of block `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub layers: Vec<Tensor>,
    pub length: usize,
    pub depth: usize,
    pub init_text: Option<String>,
}

impl PromptSet {
    pub fn param_name(layer: usize) -> String {
        format!("prompt.{layer}")
    }

    /// Layer 0 copies the token embeddings of `init_text` (truncated or padded
    /// with random rows to `length`); deeper layers are random.
    pub fn init(
        weights: &EncoderWeights,
        vocab: &Vocabulary,
        length: usize,
        depth: usize,
        init_text: Option<&str>,
        seed: u64,
    ) -> Result<Self> {
        let d = weights.config.d_model;
        check_depth(depth, weights.config.num_layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, PROMPT_INIT_STD).expect("finite std");
        let mut random_rows = |rows: usize| -> Vec<f64> { (0..rows * d).map(|_| dist.sample(&mut rng)).collect() };

        let mut layers = Vec::with_capacity(depth);
        let mut first = Vec::with_capacity(length * d);
        if let Some(text) = init_text {
            for id in word_ids(text, vocab).into_iter().take(length) {
                first.extend_from_slice(weights.token_embedding.row(id as usize));
            }
        }
        let missing = length - first.len() / d;
        first.extend(random_rows(missing));
        layers.push(Tensor::new(vec![length, d], first)?);
        for _ in 1..depth {
            layers.push(Tensor::new(vec![length, d], random_rows(length))?);
        }
        Ok(Self { layers, length, depth, init_text: init_text.map(String::from) })
    }

    /// Zero-length prompts: prompted encoding reduces to plain encoding.
    pub fn empty(d_model: usize, depth: usize) -> Self {
        Self {
            layers: (0..depth).map(|_| Tensor::zeros(&[0, d_model])).collect(),
            length: 0,
            depth,
            init_text: None,
        }
    }

    pub fn d_model(&self) -> usize {
        self.layers.first().map_or(0, Tensor::cols)
    }

    pub fn validate(&self, weights: &EncoderWeights) -> Result<()> {
        check_depth(self.depth, weights.config.num_layers)?;
        if self.layers.len() != self.depth {
            return Err(Error::invalid(format!("prompt depth {} but {} layers", self.depth, self.layers.len())));
        }
        for (j, t) in self.layers.iter().enumerate() {
            if t.shape() != [self.length, weights.config.d_model] {
                return Err(Error::shape(format!(
                    "prompt layer {j} is {:?}, expected [{}, {}]",
                    t.shape(),
                    self.length,
                    weights.config.d_model
                )));
            }
        }
        Ok(())
    }

    pub fn names(&self) -> BTreeSet<String> {
        (0..self.depth).map(Self::param_name).collect()
    }

    pub fn to_params(&self) -> ParameterSet {
        let mut p = ParameterSet::new();
        for (j, t) in self.layers.iter().enumerate() {
            p.insert(Self::param_name(j), t.clone(), true);
        }
        p
    }

    pub fn update_from(&mut self, params: &ParameterSet) -> Result<()> {
        for (j, layer) in self.layers.iter_mut().enumerate() {
            let name = Self::param_name(j);
            let t = params.get(&name).ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
            *layer = t.clone();
        }
        Ok(())
    }

    /// Gradient map with zeros for every prompt layer.
    pub fn zero_grads(&self) -> GradientMap {
        self.layers.iter().enumerate().map(|(j, t)| (Self::param_name(j), Tensor::zeros(t.shape()))).collect()
    }
}

fn check_depth(depth: usize, num_layers: usize) -> Result<()> {
    if depth == 0 || depth > num_layers.max(1) {
        return Err(Error::invalid(format!("prompt depth {depth} must be in 1..={}", num_layers.max(1))));
    }
    Ok(())
}
