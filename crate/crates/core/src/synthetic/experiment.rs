//! Base-to-novel transfer on a synthetic world: prompts are trained on
//! base-class texts only and evaluated on both splits.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::prompt_data::DEFAULT_INPUT_TEMPLATE;
use crate::trainer::{train, PromptCheckpoint, TrainConfig};
use crate::zeroshot_eval::{build_head, build_head_ensemble, evaluate, harmonic_mean, plain_template_head, Table};

use super::world::SyntheticWorld;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub base: f64,
    pub novel: f64,
    /// Harmonic mean of base and novel; zero when both are zero.
    pub hm: f64,
}

impl SplitScores {
    fn new(base: f64, novel: f64) -> Self {
        Self { base, novel, hm: harmonic_mean(base, novel).unwrap_or(0.0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub plain_template: SplitScores,
    pub ensembled: SplitScores,
    pub prompted: SplitScores,
    pub final_loss: Option<f64>,
}

impl TransferReport {
    pub fn render_text(&self) -> String {
        let mut t = Table::new(vec!["head".into(), "base".into(), "novel".into(), "HM".into()]);
        for (name, s) in [("plain-template", self.plain_template), ("ensembled", self.ensembled), ("prompted", self.prompted)]
        {
            t.push(vec![
                name.into(),
                format!("{:.2}", 100.0 * s.base),
                format!("{:.2}", 100.0 * s.novel),
                format!("{:.2}", 100.0 * s.hm),
            ]);
        }
        t.render() + "\n"
    }
}

/// Training settings used by the synthetic benchmark unless overridden.
pub fn default_train_config(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 20, seed, ..TrainConfig::default() }
}

/// Everything produced by one transfer run.
#[derive(Clone, Debug)]
pub struct TransferRun {
    pub report: TransferReport,
    pub checkpoint: PromptCheckpoint,
    pub trace: crate::trainer::LossTrace,
}

/// Top-1 accuracy of each head kind on the classes `ids`, scored only among those classes.
pub fn split_accuracies(world: &SyntheticWorld, checkpoint: &PromptCheckpoint, ids: &[u32]) -> Result<[f64; 3]> {
    let classes = world.classes(ids);
    let images = world.images.select_classes(ids)?;
    let plain = plain_template_head(&classes, &world.vocab, &world.weights, DEFAULT_INPUT_TEMPLATE)?;
    let subset = world.dataset.subset(&ids.iter().copied().collect::<BTreeSet<_>>());
    let ensembled = build_head_ensemble(&subset, &world.vocab, &world.weights)?;
    let prompted = build_head(&classes, checkpoint, &world.vocab, &world.weights, DEFAULT_INPUT_TEMPLATE)?;
    let mut out = [0.0; 3];
    for (slot, head) in out.iter_mut().zip([&plain, &ensembled, &prompted]) {
        *slot = evaluate(&images, head, "")?.0.top1;
    }
    Ok(out)
}

pub fn run_transfer(world: &SyntheticWorld, config: &TrainConfig) -> Result<TransferRun> {
    let base = world.base_ids();
    let novel = world.novel_ids();
    let train_set = world.dataset.subset(&base.iter().copied().collect());
    let run = train(&train_set, &world.vocab, &world.weights, config)?;
    let b = split_accuracies(world, &run.checkpoint, &base)?;
    let n = split_accuracies(world, &run.checkpoint, &novel)?;
    let report = TransferReport {
        plain_template: SplitScores::new(b[0], n[0]),
        ensembled: SplitScores::new(b[1], n[1]),
        prompted: SplitScores::new(b[2], n[2]),
        final_loss: run.checkpoint.final_loss,
    };
    Ok(TransferRun { report, checkpoint: run.checkpoint, trace: run.trace })
}
