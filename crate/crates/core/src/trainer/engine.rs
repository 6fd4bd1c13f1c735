//! Mini-batch loop shared by prompt and adapter training.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{adamw_step, AdamWConfig, GradientMap, LrSchedule, OptimizerState, ParameterSet, Tape, Tensor, Var};
use crate::prompt_data::PromptDataset;
use crate::text_encoder::{tokenize, EncoderWeights, TokenSequence, Vocabulary};

use super::config::{TargetMode, TrainConfig};
use super::loss::loss_and_grads;
use super::targets::{ensemble_targets_with, frozen_features};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Per-step batch losses, written as CSV `step,epoch,lr,loss`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    /// Mean batch loss over the last epoch, if any step ran.
    pub fn final_loss(&self) -> Option<f64> {
        let last = self.rows.last()?.epoch;
        let tail: Vec<f64> = self.rows.iter().filter(|r| r.epoch == last).map(|r| r.loss).collect();
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }

    /// Trailing moving average with window `w` (one value per full window).
    pub fn moving_average(&self, w: usize) -> Vec<f64> {
        let l = self.losses();
        if w == 0 || l.len() < w {
            return Vec::new();
        }
        l.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>().map_err(|e| csv_error(path, e))?;
        Ok(Self { rows })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{}: {other:?}", path.display())),
    }
}

/// A trainable map from an input index to a `[d]` prediction on a tape.
pub(crate) trait Model: Sync {
    fn parameters(&self) -> ParameterSet;
    fn set_parameters(&mut self, params: &ParameterSet) -> Result<()>;
    fn forward<'a>(&'a self, tape: &mut Tape<'a>, input: usize) -> Result<Var>;
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Sample {
    pub input: usize,
    pub target: usize,
}

/// Tokenized inputs (one per class), frozen targets and the pairs linking them.
pub(crate) struct Prepared {
    pub inputs: Vec<TokenSequence>,
    pub targets: Vec<Tensor>,
    pub samples: Vec<Sample>,
}

pub(crate) fn prepare(
    dataset: &PromptDataset,
    vocab: &Vocabulary,
    weights: &EncoderWeights,
    config: &TrainConfig,
) -> Result<Prepared> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training needs a non-empty dataset"));
    }
    let mut index: BTreeMap<u32, usize> = BTreeMap::new();
    let mut inputs = Vec::new();
    for p in &dataset.pairs {
        if let std::collections::btree_map::Entry::Vacant(e) = index.entry(p.class_id) {
            e.insert(inputs.len());
            inputs.push(tokenize(&p.input_text, vocab, &weights.config)?);
        }
    }
    let (targets, samples) = match config.target {
        TargetMode::PerSample => {
            let texts: Vec<&str> = dataset.pairs.iter().map(|p| p.output_text.as_str()).collect();
            let targets = frozen_features(&texts, vocab, weights, config.normalize_features)?;
            let samples = dataset.pairs.iter().enumerate().map(|(i, p)| Sample { input: index[&p.class_id], target: i }).collect();
            (targets, samples)
        }
        TargetMode::Ensembled => {
            let mut ds = dataset.clone();
            ds.classes.retain(|c| index.contains_key(&c.class_id));
            let per_class = ensemble_targets_with(&ds, vocab, weights, config.normalize_features)?;
            let mut targets = vec![Tensor::zeros(&[0]); inputs.len()];
            for (id, &i) in &index {
                targets[i] = per_class[id].clone();
            }
            let samples = dataset.pairs.iter().map(|p| Sample { input: index[&p.class_id], target: index[&p.class_id] }).collect();
            (targets, samples)
        }
    };
    Ok(Prepared { inputs, targets, samples })
}

/// Runs `config.epochs` epochs of seeded mini-batch AdamW on `model`.
///
/// Per-sample forward and backward passes run in parallel; gradients are
/// summed in batch order so results do not depend on thread scheduling.
pub(crate) fn optimize<M: Model>(model: &mut M, data: &Prepared, config: &TrainConfig) -> Result<LossTrace> {
    let n = data.samples.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let schedule = LrSchedule {
        base_lr: config.lr,
        warmup_epochs: config.warmup_epochs,
        total_epochs: config.epochs,
        steps_per_epoch,
        kind: config.schedule,
    };
    let mut params = model.parameters();
    let trainables = params.trainable_names();
    let mut state =
        OptimizerState::new(AdamWConfig { lr: config.lr, weight_decay: config.weight_decay, ..AdamWConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = LossTrace::default();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let lr = schedule.lr_at(step);
            let (loss, grads) = if trainables.is_empty() {
                (batch_loss_only(model, data, batch, config)?, GradientMap::new())
            } else {
                batch_gradients(model, &params, data, batch, config)?
            };
            if !trainables.is_empty() {
                adamw_step(&mut params, &grads, &mut state, lr)?;
                model.set_parameters(&params)?;
            }
            trace.rows.push(TraceRow { step, epoch, lr, loss });
            step += 1;
        }
        log::debug!("epoch {epoch}: loss {:.6}", trace.rows.last().map_or(f64::NAN, |r| r.loss));
    }
    if let Some(l) = trace.final_loss() {
        log::info!("trained {step} steps, final loss {l:.6}");
    }
    Ok(trace)
}

fn forward_batch<'a, M: Model>(model: &'a M, data: &Prepared, batch: &[usize]) -> Result<Vec<(Tape<'a>, Var)>> {
    batch
        .par_iter()
        .map(|&i| {
            let mut tape = Tape::new();
            let v = model.forward(&mut tape, data.samples[i].input)?;
            tape.check()?;
            Ok((tape, v))
        })
        .collect()
}

fn batch_loss_only<M: Model>(model: &M, data: &Prepared, batch: &[usize], config: &TrainConfig) -> Result<f64> {
    let fwd = forward_batch(model, data, batch)?;
    let preds: Vec<Tensor> = fwd.iter().map(|(t, v)| t.value(*v).clone()).collect();
    let targets: Vec<&Tensor> = batch.iter().map(|&i| &data.targets[data.samples[i].target]).collect();
    Ok(loss_and_grads(&preds, &targets, config.loss, config.temperature)?.0)
}

fn batch_gradients<M: Model>(
    model: &M,
    params: &ParameterSet,
    data: &Prepared,
    batch: &[usize],
    config: &TrainConfig,
) -> Result<(f64, GradientMap)> {
    let trainables = params.trainable_names();
    let fwd = forward_batch(model, data, batch)?;
    let preds: Vec<Tensor> = fwd.iter().map(|(t, v)| t.value(*v).clone()).collect();
    let targets: Vec<&Tensor> = batch.iter().map(|&i| &data.targets[data.samples[i].target]).collect();
    let (loss, seeds) = loss_and_grads(&preds, &targets, config.loss, config.temperature)?;
    let per_sample: Vec<GradientMap> = fwd
        .par_iter()
        .zip(seeds.into_par_iter())
        .map(|((tape, v), seed)| tape.backward_with_seed(*v, seed, &trainables))
        .collect::<Result<_>>()?;

    let mut total: GradientMap = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(name, p)| (name.clone(), Tensor::zeros(p.tensor.shape())))
        .collect();
    for g in &per_sample {
        for (name, t) in g {
            let acc = total.get_mut(name).expect("gradient for a trainable name");
            if acc.shape() == t.shape() {
                acc.add_assign(t);
            } else if t.numel() != 0 {
                return Err(Error::shape(format!("gradient of {name} is {:?}, parameter is {:?}", t.shape(), acc.shape())));
            }
        }
    }
    Ok((loss, total))
}
