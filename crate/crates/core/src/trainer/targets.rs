use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::prompt_data::PromptDataset;
use crate::text_encoder::{record, tokenize, EncoderVars, EncoderWeights, Rows, TokenSequence, Vocabulary};

/// The training-space output of a recorded forward pass: the unit-norm
/// feature, or the raw projection reshaped to `[d]`.
pub(crate) fn output_var(tape: &mut Tape<'_>, vars: &EncoderVars, normalize: bool) -> Result<Var> {
    if normalize {
        Ok(vars.feature)
    } else {
        let d = tape.value(vars.projected).numel();
        tape.reshape(vars.projected, vec![d])
    }
}

/// Frozen-path feature of one token sequence.
pub fn frozen_feature(tokens: &TokenSequence, weights: &EncoderWeights, normalize: bool) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = record(&mut tape, tokens, None, weights, Rows::ThroughEos)?;
    let out = output_var(&mut tape, &vars, normalize)?;
    tape.check()?;
    Ok(tape.value(out).clone())
}

/// Frozen features of many texts, in input order.
pub fn frozen_features(texts: &[&str], vocab: &Vocabulary, weights: &EncoderWeights, normalize: bool) -> Result<Vec<Tensor>> {
    texts
        .par_iter()
        .map(|text| frozen_feature(&tokenize(text, vocab, &weights.config)?, weights, normalize))
        .collect()
}

/// Normalizes each feature, averages, and re-normalizes.
///
/// A mean with vanishing norm (for example two antipodal vectors) has no
/// direction and is an error.
pub fn ensemble_mean(features: &[&Tensor]) -> Result<Tensor> {
    let first = features.first().ok_or_else(|| Error::invalid("cannot ensemble zero features"))?;
    let mut acc = Tensor::zeros(first.shape());
    for f in features {
        if f.shape() != first.shape() {
            return Err(Error::shape(format!("ensemble of {:?} and {:?} features", first.shape(), f.shape())));
        }
        let n = f.norm();
        if !(n > 0.0) {
            return Err(Error::invalid("cannot ensemble a zero feature"));
        }
        acc.add_assign(&f.scale(1.0 / n));
    }
    let mean = acc.scale(1.0 / features.len() as f64);
    let n = mean.norm();
    if n < 1e-12 {
        return Err(Error::invalid(format!("degenerate ensemble: mean of {} features has norm {n:e}", features.len())));
    }
    Ok(mean.scale(1.0 / n))
}

/// Arithmetic mean without normalization, for the raw-feature mode.
fn plain_mean(features: &[&Tensor]) -> Result<Tensor> {
    let first = features.first().ok_or_else(|| Error::invalid("cannot ensemble zero features"))?;
    let mut acc = Tensor::zeros(first.shape());
    for f in features {
        acc = acc.add(f)?;
    }
    Ok(acc.scale(1.0 / features.len() as f64))
}

/// Per-class ensembled target feature: the normalized mean of the normalized
/// frozen features of the class's outputs.
pub fn ensemble_targets(
    dataset: &PromptDataset,
    vocab: &Vocabulary,
    weights: &EncoderWeights,
) -> Result<BTreeMap<u32, Tensor>> {
    ensemble_targets_with(dataset, vocab, weights, true)
}

pub(crate) fn ensemble_targets_with(
    dataset: &PromptDataset,
    vocab: &Vocabulary,
    weights: &EncoderWeights,
    normalize: bool,
) -> Result<BTreeMap<u32, Tensor>> {
    let by_class = dataset.outputs_by_class();
    let mut out = BTreeMap::new();
    for class in &dataset.classes {
        let texts: Vec<&str> = by_class.get(&class.class_id).cloned().unwrap_or_default();
        if texts.is_empty() {
            return Err(Error::invalid(format!("class {:?} has no outputs to ensemble", class.name)));
        }
        let feats = frozen_features(&texts, vocab, weights, normalize)?;
        let refs: Vec<&Tensor> = feats.iter().collect();
        let target = if normalize { ensemble_mean(&refs)? } else { plain_mean(&refs)? };
        out.insert(class.class_id, target);
    }
    Ok(out)
}
