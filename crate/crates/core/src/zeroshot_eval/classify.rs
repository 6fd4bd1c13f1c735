use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::features::ImageFeatureSet;
use super::head::ClassifierHead;

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    /// `[N, C]`, rows sum to one.
    pub probabilities: Tensor,
    pub predictions: Vec<u32>,
}

/// Softmax over `temperature * cosine(image, class)`; ties in the argmax go
/// to the lowest class index.
pub fn classify(images: &ImageFeatureSet, head: &ClassifierHead) -> Result<Classification> {
    let d = head.dim();
    if images.dim() != d && !images.is_empty() {
        return Err(Error::shape(format!("image features have d = {}, head has d = {d}", images.dim())));
    }
    let c = head.num_classes();
    let rows: Vec<(Vec<f64>, u32)> = (0..images.len())
        .into_par_iter()
        .map(|i| {
            let f = images.features.row(i);
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(Error::invalid(format!("image {i} has a zero feature")));
            }
            let logits: Vec<f64> = (0..c)
                .map(|k| {
                    let s: f64 = f.iter().zip(head.class_features.row(k)).map(|(a, b)| a * b).sum();
                    head.temperature * s / norm
                })
                .collect();
            let mut best = 0;
            for (k, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = k;
                }
            }
            Ok((softmax(&logits), best as u32))
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(images.len() * c);
    let mut predictions = Vec::with_capacity(images.len());
    for (p, k) in rows {
        data.extend(p);
        predictions.push(k);
    }
    Ok(Classification { probabilities: Tensor::new(vec![images.len(), c], data)?, predictions })
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub fn top1_accuracy(predictions: &[u32], labels: &[u32]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Accuracy per class; `None` for classes without samples.
pub fn per_class_accuracy(predictions: &[u32], labels: &[u32], num_classes: usize) -> Vec<Option<f64>> {
    let mut hits = vec![0usize; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        counts[l as usize] += 1;
        if p == l {
            hits[l as usize] += 1;
        }
    }
    hits.iter().zip(&counts).map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64)).collect()
}

/// `2 * base * novel / (base + novel)`.
pub fn harmonic_mean(base: f64, novel: f64) -> Result<f64> {
    if !(base.is_finite() && novel.is_finite()) || base < 0.0 || novel < 0.0 {
        return Err(Error::invalid(format!("harmonic mean needs non-negative accuracies, got {base} and {novel}")));
    }
    if base + novel == 0.0 {
        return Err(Error::invalid("harmonic mean of two zeros is undefined"));
    }
    Ok(2.0 * base * novel / (base + novel))
}

/// Arithmetic mean, as in an "Average" column.
pub fn aggregate(accuracies: &[f64]) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(Error::invalid("aggregate of an empty list"));
    }
    Ok(accuracies.iter().sum::<f64>() / accuracies.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    /// Mean probability assigned to the true class.
    pub correct: f64,
    /// Mean probability per incorrect class.
    pub incorrect: f64,
}

pub fn confidence_report(probabilities: &Tensor, labels: &[u32]) -> Result<Confidence> {
    let (n, c) = probabilities.dims2()?;
    if n != labels.len() {
        return Err(Error::shape(format!("{n} probability rows for {} labels", labels.len())));
    }
    if n == 0 {
        return Ok(Confidence { correct: 0.0, incorrect: 0.0 });
    }
    let mut correct = 0.0;
    let mut incorrect = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let row = probabilities.row(i);
        let l = l as usize;
        if l >= c {
            return Err(Error::invalid(format!("label {l} out of range for {c} classes")));
        }
        correct += row[l];
        if c > 1 {
            incorrect += row.iter().enumerate().filter(|(k, _)| *k != l).map(|(_, p)| p).sum::<f64>() / (c - 1) as f64;
        }
    }
    Ok(Confidence { correct: correct / n as f64, incorrect: incorrect / n as f64 })
}
