//! Classifier heads: one unit-norm text feature per class.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::prompt_data::{build_inputs, ClassRecord, PromptDataset};
use crate::text_encoder::{encode, encode_prompted, tokenize, EncoderWeights, Vocabulary};
use crate::trainer::{ensemble_targets, AdapterWeights, PromptCheckpoint};

/// CLIP's logit scale.
pub const DEFAULT_TEMPERATURE: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadProvenance {
    /// Class-name template encoded with learned prompts.
    Prompted,
    /// Mean of description features per class.
    Ensembled,
    /// Class-name template encoded without prompts.
    PlainTemplate,
    /// Class-name template encoded, then passed through an output adapter.
    Adapted,
}

impl HeadProvenance {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadProvenance::Prompted => "prompted",
            HeadProvenance::Ensembled => "ensembled",
            HeadProvenance::PlainTemplate => "plain-template",
            HeadProvenance::Adapted => "adapted",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    /// `[C, d]`, unit rows.
    pub class_features: Tensor,
    pub class_names: Vec<String>,
    pub provenance: HeadProvenance,
    pub temperature: f64,
}

impl ClassifierHead {
    /// Re-normalizes the rows of `features`; needs at least two classes.
    pub fn new(features: Tensor, class_names: Vec<String>, provenance: HeadProvenance, temperature: f64) -> Result<Self> {
        let (c, _) = features.dims2()?;
        if features.shape().len() != 2 || c != class_names.len() {
            return Err(Error::shape(format!("head features {:?} for {} classes", features.shape(), class_names.len())));
        }
        if c < 2 {
            return Err(Error::invalid(format!("a classifier head needs at least 2 classes, got {c}")));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
        }
        let class_features = features.l2_normalize_rows()?;
        Ok(Self { class_features, class_names, provenance, temperature })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn dim(&self) -> usize {
        self.class_features.cols()
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
        }
        self.temperature = temperature;
        Ok(self)
    }
}

fn stack(rows: Vec<Tensor>) -> Result<Tensor> {
    Tensor::from_rows(&rows.into_iter().map(Tensor::into_data).collect::<Vec<_>>())
}

fn names(classes: &[ClassRecord]) -> Vec<String> {
    classes.iter().map(|c| c.name.clone()).collect()
}

/// Prompted head: each class's rendered template encoded with the checkpoint's prompts.
pub fn build_head(
    classes: &[ClassRecord],
    checkpoint: &PromptCheckpoint,
    vocab: &Vocabulary,
    weights: &EncoderWeights,
    template: &str,
) -> Result<ClassifierHead> {
    checkpoint.verify(weights)?;
    let texts = build_inputs(classes, template)?;
    let rows = texts
        .par_iter()
        .map(|t| Ok(encode_prompted(&tokenize(t, vocab, &weights.config)?, &checkpoint.prompts, weights)?.vector))
        .collect::<Result<Vec<_>>>()?;
    ClassifierHead::new(stack(rows)?, names(classes), HeadProvenance::Prompted, DEFAULT_TEMPERATURE)
}

/// Zero-shot head from the plain class-name template.
pub fn plain_template_head(
    classes: &[ClassRecord],
    vocab: &Vocabulary,
    weights: &EncoderWeights,
    template: &str,
) -> Result<ClassifierHead> {
    let texts = build_inputs(classes, template)?;
    let rows = texts
        .par_iter()
        .map(|t| Ok(encode(&tokenize(t, vocab, &weights.config)?, weights)?.vector))
        .collect::<Result<Vec<_>>>()?;
    ClassifierHead::new(stack(rows)?, names(classes), HeadProvenance::PlainTemplate, DEFAULT_TEMPERATURE)
}

/// Description-ensemble head: per class, the normalized mean of normalized
/// description features.
pub fn build_head_ensemble(dataset: &PromptDataset, vocab: &Vocabulary, weights: &EncoderWeights) -> Result<ClassifierHead> {
    let mut targets = ensemble_targets(dataset, vocab, weights)?;
    let rows = dataset.classes.iter().map(|c| targets.remove(&c.class_id).expect("target per class")).collect();
    ClassifierHead::new(stack(rows)?, names(&dataset.classes), HeadProvenance::Ensembled, DEFAULT_TEMPERATURE)
}

/// Plain-template features passed through a trained output adapter.
pub fn build_head_adapter(
    classes: &[ClassRecord],
    adapter: &AdapterWeights,
    vocab: &Vocabulary,
    weights: &EncoderWeights,
    template: &str,
) -> Result<ClassifierHead> {
    adapter.verify(weights)?;
    let texts = build_inputs(classes, template)?;
    let rows = texts
        .par_iter()
        .map(|t| Ok(adapter.apply(&encode(&tokenize(t, vocab, &weights.config)?, weights)?)?.vector))
        .collect::<Result<Vec<_>>>()?;
    ClassifierHead::new(stack(rows)?, names(classes), HeadProvenance::Adapted, DEFAULT_TEMPERATURE)
}
