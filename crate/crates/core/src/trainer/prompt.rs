use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::numerics::{ParameterSet, Tape, Var};
use crate::prompt_data::PromptDataset;
use crate::text_encoder::{record, EncoderWeights, PromptSet, Rows, TokenSequence, Vocabulary};

use super::config::TrainConfig;
use super::engine::{optimize, prepare, LossTrace, Model};
use super::targets::output_var;

pub const CHECKPOINT_VERSION: &str = "protext-prompts/1";

/// Learned prompts bound to the encoder they were trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptCheckpoint {
    pub version: String,
    pub encoder_fingerprint: String,
    pub config: TrainConfig,
    pub final_loss: Option<f64>,
    pub prompts: PromptSet,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: String,
    encoder_fingerprint: String,
    #[serde(rename = "T")]
    length: usize,
    #[serde(rename = "J")]
    depth: usize,
    config: TrainConfig,
    final_loss: Option<f64>,
    init_text: Option<String>,
}

impl PromptCheckpoint {
    /// An untrained checkpoint holding `prompts`.
    pub fn new(prompts: PromptSet, weights: &EncoderWeights, config: TrainConfig) -> Self {
        Self {
            version: CHECKPOINT_VERSION.to_string(),
            encoder_fingerprint: weights.fingerprint(),
            config,
            final_loss: None,
            prompts,
        }
    }

    /// Zero-length prompts: heads built from this equal plain-template heads.
    pub fn empty(weights: &EncoderWeights) -> Self {
        let config = TrainConfig { prompt_length: 0, epochs: 0, init_text: None, ..TrainConfig::default() };
        Self::new(PromptSet::empty(weights.config.d_model, 1), weights, config)
    }

    pub fn verify(&self, weights: &EncoderWeights) -> Result<()> {
        let actual = weights.fingerprint();
        if actual != self.encoder_fingerprint {
            return Err(Error::FingerprintMismatch { expected: self.encoder_fingerprint.clone(), actual });
        }
        self.prompts.validate(weights)
    }

    pub fn save(&self, manifest: &Path) -> Result<()> {
        let header = CheckpointHeader {
            version: self.version.clone(),
            encoder_fingerprint: self.encoder_fingerprint.clone(),
            length: self.prompts.length,
            depth: self.prompts.depth,
            config: self.config.clone(),
            final_loss: self.final_loss,
            init_text: self.prompts.init_text.clone(),
        };
        let tensors =
            self.prompts.layers.iter().enumerate().map(|(j, t)| (PromptSet::param_name(j), t.clone())).collect();
        container::save(manifest, &header, &tensors)
    }

    /// Reads a checkpoint without checking it against any encoder.
    pub fn load(manifest: &Path) -> Result<Self> {
        let (h, mut tensors): (CheckpointHeader, _) = container::load(manifest)?;
        if h.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!("unsupported checkpoint version {:?}", h.version)));
        }
        let mut layers = Vec::with_capacity(h.depth);
        for j in 0..h.depth {
            let name = PromptSet::param_name(j);
            let t = tensors.remove(&name).ok_or_else(|| Error::invalid(format!("checkpoint is missing {name}")))?;
            if t.shape().len() != 2 || t.rows() != h.length {
                return Err(Error::shape(format!("{name} is {:?}, expected {} rows", t.shape(), h.length)));
            }
            layers.push(t);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::invalid(format!("unexpected tensor {extra} in checkpoint")));
        }
        let prompts = PromptSet { layers, length: h.length, depth: h.depth, init_text: h.init_text };
        Ok(Self {
            version: h.version,
            encoder_fingerprint: h.encoder_fingerprint,
            config: h.config,
            final_loss: h.final_loss,
            prompts,
        })
    }

    /// Reads a checkpoint and checks it was trained against `weights`.
    pub fn load_for(manifest: &Path, weights: &EncoderWeights) -> Result<Self> {
        let ck = Self::load(manifest)?;
        ck.verify(weights)?;
        Ok(ck)
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub checkpoint: PromptCheckpoint,
    pub trace: LossTrace,
}

struct PromptModel<'w> {
    weights: &'w EncoderWeights,
    prompts: PromptSet,
    inputs: &'w [TokenSequence],
    normalize: bool,
}

impl Model for PromptModel<'_> {
    fn parameters(&self) -> ParameterSet {
        self.prompts.to_params()
    }

    fn set_parameters(&mut self, params: &ParameterSet) -> Result<()> {
        self.prompts.update_from(params)
    }

    fn forward<'a>(&'a self, tape: &mut Tape<'a>, input: usize) -> Result<Var> {
        let vars = record(tape, &self.inputs[input], Some(&self.prompts), self.weights, Rows::ThroughEos)?;
        output_var(tape, &vars, self.normalize)
    }
}

/// Learns prompts that map each class's input template onto the frozen
/// features of its outputs. Only the prompt layers are updated.
pub fn train(
    dataset: &PromptDataset,
    vocab: &Vocabulary,
    weights: &EncoderWeights,
    config: &TrainConfig,
) -> Result<TrainRun> {
    let data = prepare(dataset, vocab, weights, config)?;
    let ctx = weights.config.context_length;
    if let Some(longest) = data.inputs.iter().max_by_key(|t| t.eos_position) {
        if longest.eos_position + config.prompt_length >= ctx {
            return Err(Error::Capacity(format!(
                "input {:?} with {} prompt rows does not fit context length {ctx}",
                longest.source_text, config.prompt_length
            )));
        }
    }
    let prompts = PromptSet::init(
        weights,
        vocab,
        config.prompt_length,
        config.prompt_depth,
        config.init_text.as_deref(),
        config.seed,
    )?;
    let mut model = PromptModel { weights, prompts, inputs: &data.inputs, normalize: config.normalize_features };
    let trace = optimize(&mut model, &data, config)?;
    let mut checkpoint = PromptCheckpoint::new(model.prompts, weights, config.clone());
    checkpoint.final_loss = trace.final_loss();
    Ok(TrainRun { checkpoint, trace })
}
