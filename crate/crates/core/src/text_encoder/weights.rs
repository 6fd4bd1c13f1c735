//! Frozen text-encoder weights.
//!
//! Tensor names in the weights file (`x @ W` convention, input dimension first):
//!
//! | name | shape |
//! |------|-------|
//! | `token_embedding` | `[vocab, d_model]` |
//! | `positional_embedding` | `[context_length, d_model]` |
//! | `layers.{i}.ln_1.weight`, `layers.{i}.ln_1.bias` | `[d_model]` |
//! | `layers.{i}.attn.in_proj_weight` | `[d_model, 3 * d_model]` (q, k, v column blocks) |
//! | `layers.{i}.attn.in_proj_bias` | `[3 * d_model]` |
//! | `layers.{i}.attn.out_proj_weight` | `[d_model, d_model]` |
//! | `layers.{i}.attn.out_proj_bias` | `[d_model]` |
//! | `layers.{i}.ln_2.weight`, `layers.{i}.ln_2.bias` | `[d_model]` |
//! | `layers.{i}.mlp.fc_weight` | `[d_model, hidden]` |
//! | `layers.{i}.mlp.fc_bias` | `[hidden]` |
//! | `layers.{i}.mlp.proj_weight` | `[hidden, d_model]` |
//! | `layers.{i}.mlp.proj_bias` | `[d_model]` |
//! | `ln_final.weight`, `ln_final.bias` | `[d_model]` |
//! | `text_projection` | `[d_model, d]` |

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::EncoderConfig;
use crate::container;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights {
    pub ln_1_weight: Tensor,
    pub ln_1_bias: Tensor,
    pub in_proj_weight: Tensor,
    pub in_proj_bias: Tensor,
    pub out_proj_weight: Tensor,
    pub out_proj_bias: Tensor,
    pub ln_2_weight: Tensor,
    pub ln_2_bias: Tensor,
    pub fc_weight: Tensor,
    pub fc_bias: Tensor,
    pub proj_weight: Tensor,
    pub proj_bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights {
    pub config: EncoderConfig,
    pub token_embedding: Tensor,
    pub positional_embedding: Tensor,
    pub layers: Vec<BlockWeights>,
    pub ln_final_weight: Tensor,
    pub ln_final_bias: Tensor,
    pub text_projection: Tensor,
}

#[derive(Serialize, Deserialize)]
struct WeightsHeader {
    config: EncoderConfig,
}

/// Standard deviations used by [`EncoderWeights::random`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitScales {
    pub token_embedding: f64,
    pub positional_embedding: f64,
    /// Linear layers use `gain / sqrt(fan_in)`.
    pub linear_gain: f64,
}

impl Default for InitScales {
    fn default() -> Self {
        Self { token_embedding: 1.0, positional_embedding: 0.1, linear_gain: 1.0 }
    }
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite std");
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

impl EncoderWeights {
    pub fn vocab_size(&self) -> usize {
        self.token_embedding.rows()
    }

    /// Seeded random weights with the given shape.
    pub fn random(config: &EncoderConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        Self::random_with(config, vocab_size, seed, InitScales::default())
    }

    pub fn random_with(config: &EncoderConfig, vocab_size: usize, seed: u64, scales: InitScales) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let h = config.mlp_width();
        let lin = |fan_in: usize| scales.linear_gain / (fan_in as f64).sqrt();
        let token_embedding = normal(&mut rng, &[vocab_size, d], scales.token_embedding);
        let positional_embedding = normal(&mut rng, &[config.context_length, d], scales.positional_embedding);
        let mut layers = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            layers.push(BlockWeights {
                ln_1_weight: Tensor::full(&[d], 1.0),
                ln_1_bias: Tensor::zeros(&[d]),
                in_proj_weight: normal(&mut rng, &[d, 3 * d], lin(d)),
                in_proj_bias: Tensor::zeros(&[3 * d]),
                out_proj_weight: normal(&mut rng, &[d, d], lin(d)),
                out_proj_bias: Tensor::zeros(&[d]),
                ln_2_weight: Tensor::full(&[d], 1.0),
                ln_2_bias: Tensor::zeros(&[d]),
                fc_weight: normal(&mut rng, &[d, h], lin(d)),
                fc_bias: Tensor::zeros(&[h]),
                proj_weight: normal(&mut rng, &[h, d], lin(h)),
                proj_bias: Tensor::zeros(&[d]),
            });
        }
        let text_projection = normal(&mut rng, &[d, config.projection_dim], lin(d));
        Ok(Self {
            config: config.clone(),
            token_embedding,
            positional_embedding,
            layers,
            ln_final_weight: Tensor::full(&[d], 1.0),
            ln_final_bias: Tensor::zeros(&[d]),
            text_projection,
        })
    }

    pub fn named_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut m = BTreeMap::new();
        m.insert("token_embedding".into(), self.token_embedding.clone());
        m.insert("positional_embedding".into(), self.positional_embedding.clone());
        for (i, b) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            m.insert(p("ln_1.weight"), b.ln_1_weight.clone());
            m.insert(p("ln_1.bias"), b.ln_1_bias.clone());
            m.insert(p("attn.in_proj_weight"), b.in_proj_weight.clone());
            m.insert(p("attn.in_proj_bias"), b.in_proj_bias.clone());
            m.insert(p("attn.out_proj_weight"), b.out_proj_weight.clone());
            m.insert(p("attn.out_proj_bias"), b.out_proj_bias.clone());
            m.insert(p("ln_2.weight"), b.ln_2_weight.clone());
            m.insert(p("ln_2.bias"), b.ln_2_bias.clone());
            m.insert(p("mlp.fc_weight"), b.fc_weight.clone());
            m.insert(p("mlp.fc_bias"), b.fc_bias.clone());
            m.insert(p("mlp.proj_weight"), b.proj_weight.clone());
            m.insert(p("mlp.proj_bias"), b.proj_bias.clone());
        }
        m.insert("ln_final.weight".into(), self.ln_final_weight.clone());
        m.insert("ln_final.bias".into(), self.ln_final_bias.clone());
        m.insert("text_projection".into(), self.text_projection.clone());
        m
    }

    pub fn from_named(config: EncoderConfig, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let h = config.mlp_width();
        let vocab = match tensors.get("token_embedding").map(|t| t.shape().to_vec()).as_deref() {
            Some([v, _]) => *v,
            _ => return Err(Error::invalid("weights missing a rank-2 token_embedding")),
        };
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = tensors.remove(name).ok_or_else(|| Error::invalid(format!("weights missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(Error::shape(format!("{name}: expected {shape:?}, got {:?}", t.shape())));
            }
            Ok(t)
        };
        let token_embedding = take("token_embedding", &[vocab, d])?;
        let positional_embedding = take("positional_embedding", &[config.context_length, d])?;
        let mut layers = Vec::with_capacity(config.num_layers);
        for i in 0..config.num_layers {
            let mut t = |s: &str, shape: &[usize]| take(&format!("layers.{i}.{s}"), shape);
            layers.push(BlockWeights {
                ln_1_weight: t("ln_1.weight", &[d])?,
                ln_1_bias: t("ln_1.bias", &[d])?,
                in_proj_weight: t("attn.in_proj_weight", &[d, 3 * d])?,
                in_proj_bias: t("attn.in_proj_bias", &[3 * d])?,
                out_proj_weight: t("attn.out_proj_weight", &[d, d])?,
                out_proj_bias: t("attn.out_proj_bias", &[d])?,
                ln_2_weight: t("ln_2.weight", &[d])?,
                ln_2_bias: t("ln_2.bias", &[d])?,
                fc_weight: t("mlp.fc_weight", &[d, h])?,
                fc_bias: t("mlp.fc_bias", &[h])?,
                proj_weight: t("mlp.proj_weight", &[h, d])?,
                proj_bias: t("mlp.proj_bias", &[d])?,
            });
        }
        let ln_final_weight = take("ln_final.weight", &[d])?;
        let ln_final_bias = take("ln_final.bias", &[d])?;
        let text_projection = take("text_projection", &[d, config.projection_dim])?;
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::invalid(format!("unexpected tensor {extra} in weights")));
        }
        Ok(Self {
            config,
            token_embedding,
            positional_embedding,
            layers,
            ln_final_weight,
            ln_final_bias,
            text_projection,
        })
    }

    pub fn save(&self, manifest: &Path) -> Result<()> {
        container::save(manifest, &WeightsHeader { config: self.config.clone() }, &self.named_tensors())
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let (header, tensors): (WeightsHeader, _) = container::load(manifest)?;
        Self::from_named(header.config, tensors)
    }

    /// SHA-256 over the config and every tensor (name, shape, little-endian data) in name order.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for (name, t) in self.named_tensors() {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            for s in t.shape() {
                hasher.update((*s as u64).to_le_bytes());
            }
            for v in t.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip_keeps_fingerprint() {
        let w = EncoderWeights::random(&EncoderConfig::toy(), 12, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.json");
        w.save(&path).unwrap();
        let back = EncoderWeights::load(&path).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.fingerprint(), w.fingerprint());
    }

    #[test]
    fn fingerprint_sees_single_entry_changes() {
        let w = EncoderWeights::random(&EncoderConfig::toy(), 12, 7).unwrap();
        let mut w2 = w.clone();
        w2.layers[1].fc_bias.data_mut()[3] += 1e-12;
        assert_ne!(w.fingerprint(), w2.fingerprint());
        assert_eq!(w.fingerprint().len(), 64);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = EncoderWeights::random(&EncoderConfig::toy(), 12, 3).unwrap();
        let b = EncoderWeights::random(&EncoderConfig::toy(), 12, 3).unwrap();
        let c = EncoderWeights::random(&EncoderConfig::toy(), 12, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn missing_or_misshapen_tensors_are_rejected() {
        let w = EncoderWeights::random(&EncoderConfig::toy(), 12, 7).unwrap();
        let mut named = w.named_tensors();
        named.remove("ln_final.bias");
        assert!(EncoderWeights::from_named(w.config.clone(), named).is_err());
        let mut named = w.named_tensors();
        named.insert("text_projection".into(), Tensor::zeros(&[16, 9]));
        assert!(matches!(EncoderWeights::from_named(w.config.clone(), named), Err(Error::Shape(_))));
    }
}
