//! Feature adapters on the encoder output, trained with the same objective
//! as prompts for comparison.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::numerics::{ParameterSet, Tape, Tensor, Var};
use crate::prompt_data::PromptDataset;
use crate::text_encoder::{EncoderWeights, TextFeature, Vocabulary};

use super::config::TrainConfig;
use super::engine::{optimize, prepare, LossTrace, Model};
use super::targets::frozen_feature;

pub const ADAPTER_VERSION: &str = "protext-adapter/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdapterKind {
    /// `f W + b`, `W` is `[d, d]`.
    Linear,
    /// `gelu(f W1 + b1) W2 + b2` through a `d / reduction` bottleneck.
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub kind: AdapterKind,
    /// Residual ratio: output is `normalize(alpha * A(f) + (1 - alpha) * f)`.
    pub alpha: f64,
    pub reduction: usize,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self { kind: AdapterKind::Linear, alpha: 0.2, reduction: 4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterWeights {
    pub config: AdapterConfig,
    pub encoder_fingerprint: String,
    pub tensors: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct AdapterHeader {
    version: String,
    encoder_fingerprint: String,
    adapter: AdapterConfig,
}

impl AdapterWeights {
    /// Linear adapters start at the identity; MLP adapters start with a
    /// random first layer and a zero second layer.
    pub fn init(config: AdapterConfig, weights: &EncoderWeights, seed: u64) -> Result<Self> {
        let d = weights.config.projection_dim;
        if !(0.0..=1.0).contains(&config.alpha) {
            return Err(Error::invalid(format!("adapter alpha must be in [0, 1], got {}", config.alpha)));
        }
        let mut tensors = BTreeMap::new();
        match config.kind {
            AdapterKind::Linear => {
                tensors.insert("adapter.weight".into(), Tensor::identity(d));
                tensors.insert("adapter.bias".into(), Tensor::zeros(&[d]));
            }
            AdapterKind::Mlp => {
                let h = hidden_width(d, config.reduction)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dist = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("finite std");
                let w1 = (0..d * h).map(|_| dist.sample(&mut rng)).collect();
                tensors.insert("adapter.fc1.weight".into(), Tensor::new(vec![d, h], w1)?);
                tensors.insert("adapter.fc1.bias".into(), Tensor::zeros(&[h]));
                tensors.insert("adapter.fc2.weight".into(), Tensor::zeros(&[h, d]));
                tensors.insert("adapter.fc2.bias".into(), Tensor::zeros(&[d]));
            }
        }
        Ok(Self { config, encoder_fingerprint: weights.fingerprint(), tensors })
    }

    pub fn hidden_width(&self) -> Option<usize> {
        self.tensors.get("adapter.fc1.weight").map(Tensor::cols)
    }

    fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::invalid(format!("adapter is missing {name}")))
    }

    /// Records the adapted feature of a `[d]` input; adapter tensors are parameters.
    pub fn record<'a>(&'a self, tape: &mut Tape<'a>, f: Var, normalize: bool) -> Result<Var> {
        let d = tape.value(f).numel();
        let x = tape.reshape(f, vec![1, d])?;
        let a = match self.config.kind {
            AdapterKind::Linear => {
                let w = tape.param("adapter.weight", self.tensor("adapter.weight")?);
                let b = tape.param("adapter.bias", self.tensor("adapter.bias")?);
                let y = tape.matmul(x, w)?;
                tape.add_row(y, b)?
            }
            AdapterKind::Mlp => {
                let w1 = tape.param("adapter.fc1.weight", self.tensor("adapter.fc1.weight")?);
                let b1 = tape.param("adapter.fc1.bias", self.tensor("adapter.fc1.bias")?);
                let w2 = tape.param("adapter.fc2.weight", self.tensor("adapter.fc2.weight")?);
                let b2 = tape.param("adapter.fc2.bias", self.tensor("adapter.fc2.bias")?);
                let h = tape.matmul(x, w1)?;
                let h = tape.add_row(h, b1)?;
                let h = tape.gelu(h);
                let y = tape.matmul(h, w2)?;
                tape.add_row(y, b2)?
            }
        };
        let a = tape.scale(a, self.config.alpha);
        let r = tape.scale(x, 1.0 - self.config.alpha);
        let mut out = tape.add(a, r)?;
        if normalize {
            out = tape.l2_normalize(out)?;
        }
        tape.reshape(out, vec![d])
    }

    /// Adapted, re-normalized feature.
    pub fn apply(&self, feature: &TextFeature) -> Result<TextFeature> {
        let mut tape = Tape::new();
        let f = tape.constant(&feature.vector);
        let out = self.record(&mut tape, f, true)?;
        tape.check()?;
        Ok(TextFeature { vector: tape.value(out).clone(), normalized: true })
    }

    pub fn verify(&self, weights: &EncoderWeights) -> Result<()> {
        let actual = weights.fingerprint();
        if actual != self.encoder_fingerprint {
            return Err(Error::FingerprintMismatch { expected: self.encoder_fingerprint.clone(), actual });
        }
        Ok(())
    }

    pub fn save(&self, manifest: &Path) -> Result<()> {
        let header = AdapterHeader {
            version: ADAPTER_VERSION.into(),
            encoder_fingerprint: self.encoder_fingerprint.clone(),
            adapter: self.config,
        };
        container::save(manifest, &header, &self.tensors)
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let (h, tensors): (AdapterHeader, _) = container::load(manifest)?;
        if h.version != ADAPTER_VERSION {
            return Err(Error::invalid(format!("unsupported adapter version {:?}", h.version)));
        }
        Ok(Self { config: h.adapter, encoder_fingerprint: h.encoder_fingerprint, tensors })
    }
}

fn hidden_width(d: usize, reduction: usize) -> Result<usize> {
    match d.checked_div(reduction) {
        Some(h) if h > 0 => Ok(h),
        _ => Err(Error::invalid(format!("reduction {reduction} leaves no hidden units for d = {d}"))),
    }
}

#[derive(Clone, Debug)]
pub struct AdapterRun {
    pub adapter: AdapterWeights,
    pub trace: LossTrace,
}

struct AdapterModel<'w> {
    adapter: AdapterWeights,
    inputs: &'w [Tensor],
    normalize: bool,
}

impl Model for AdapterModel<'_> {
    fn parameters(&self) -> ParameterSet {
        let mut p = ParameterSet::new();
        for (name, t) in &self.adapter.tensors {
            p.insert(name.clone(), t.clone(), true);
        }
        p
    }

    fn set_parameters(&mut self, params: &ParameterSet) -> Result<()> {
        for (name, t) in self.adapter.tensors.iter_mut() {
            *t = params.get(name).ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?.clone();
        }
        Ok(())
    }

    fn forward<'a>(&'a self, tape: &mut Tape<'a>, input: usize) -> Result<Var> {
        let f = tape.constant(&self.inputs[input]);
        self.adapter.record(tape, f, self.normalize)
    }
}

/// Trains an output adapter with the prompt-training loop; the encoder stays frozen.
pub fn train_adapter(
    dataset: &PromptDataset,
    vocab: &Vocabulary,
    weights: &EncoderWeights,
    config: &TrainConfig,
    adapter: &AdapterConfig,
) -> Result<AdapterRun> {
    let data = prepare(dataset, vocab, weights, config)?;
    let inputs =
        data.inputs.iter().map(|t| frozen_feature(t, weights, config.normalize_features)).collect::<Result<Vec<_>>>()?;
    let init = AdapterWeights::init(*adapter, weights, config.seed)?;
    let mut model = AdapterModel { adapter: init, inputs: &inputs, normalize: config.normalize_features };
    let trace = optimize(&mut model, &data, config)?;
    Ok(AdapterRun { adapter: model.adapter, trace })
}
