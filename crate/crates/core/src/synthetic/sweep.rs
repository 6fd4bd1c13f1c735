//! Cartesian ablation sweeps over training settings on one synthetic world.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::{train, LossKind, TargetMode, TrainConfig};
use crate::zeroshot_eval::Table;

use super::experiment::{split_accuracies, SplitScores};
use super::world::SyntheticWorld;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "axis", content = "values")]
pub enum Axis {
    PromptLength(Vec<usize>),
    PromptDepth(Vec<usize>),
    Loss(Vec<LossKind>),
    Target(Vec<TargetMode>),
    DescriptionsPerClass(Vec<usize>),
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::PromptLength(_) => "T",
            Axis::PromptDepth(_) => "J",
            Axis::Loss(_) => "loss",
            Axis::Target(_) => "target",
            Axis::DescriptionsPerClass(_) => "descriptions",
        }
    }

    fn len(&self) -> usize {
        match self {
            Axis::PromptLength(v) | Axis::PromptDepth(v) | Axis::DescriptionsPerClass(v) => v.len(),
            Axis::Loss(v) => v.len(),
            Axis::Target(v) => v.len(),
        }
    }

    /// Applies value `i` to the cell settings and returns its label.
    fn apply(&self, i: usize, cell: &mut CellSettings) -> String {
        match self {
            Axis::PromptLength(v) => {
                cell.train.prompt_length = v[i];
                v[i].to_string()
            }
            Axis::PromptDepth(v) => {
                cell.train.prompt_depth = v[i];
                v[i].to_string()
            }
            Axis::Loss(v) => {
                cell.train.loss = v[i];
                v[i].as_str().to_string()
            }
            Axis::Target(v) => {
                cell.train.target = v[i];
                v[i].as_str().to_string()
            }
            Axis::DescriptionsPerClass(v) => {
                cell.descriptions = Some(v[i]);
                v[i].to_string()
            }
        }
    }

    /// Parses `T=0,4`, `J=1,2`, `loss=mse,l1`, `target=per-sample,ensembled`
    /// or `descriptions=1,5,20`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, values) =
            spec.split_once('=').ok_or_else(|| Error::invalid(format!("sweep axis {spec:?} is not NAME=V1,V2,...")))?;
        let items: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        let ints = || -> Result<Vec<usize>> {
            items
                .iter()
                .map(|s| s.parse().map_err(|_| Error::invalid(format!("sweep value {s:?} is not an integer"))))
                .collect()
        };
        let axis = match name.trim() {
            "T" => Axis::PromptLength(ints()?),
            "J" => Axis::PromptDepth(ints()?),
            "loss" => Axis::Loss(items.iter().map(|s| s.parse()).collect::<Result<_>>()?),
            "target" => Axis::Target(items.iter().map(|s| s.parse()).collect::<Result<_>>()?),
            "descriptions" => Axis::DescriptionsPerClass(ints()?),
            other => {
                return Err(Error::invalid(format!(
                    "unknown sweep axis {other:?}, expected T, J, loss, target or descriptions"
                )))
            }
        };
        if axis.len() == 0 {
            return Err(Error::invalid(format!("sweep axis {name} has no values")));
        }
        Ok(axis)
    }
}

#[derive(Clone, Debug)]
struct CellSettings {
    train: TrainConfig,
    descriptions: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: usize,
    /// `(axis name, value label)` in axis order.
    pub settings: Vec<(String, String)>,
    pub seed: u64,
    pub scores: SplitScores,
    pub final_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axes: Vec<String>,
    /// Plain-template head on the same world, for reference.
    pub baseline: SplitScores,
    pub cells: Vec<SweepCell>,
}

/// Runs every combination of axis values. The world is shared; cell `i`
/// trains with seed `base.seed + i`.
pub fn run_sweep(world: &SyntheticWorld, base: &TrainConfig, axes: &[Axis]) -> Result<SweepReport> {
    if axes.is_empty() || axes.iter().any(|a| a.len() == 0) {
        return Err(Error::invalid("empty sweep: give at least one axis with at least one value"));
    }
    let total: usize = axes.iter().map(Axis::len).product();
    let base_ids = world.base_ids();
    let novel_ids = world.novel_ids();
    let train_all = world.dataset.subset(&base_ids.iter().copied().collect());

    let cells = (0..total)
        .into_par_iter()
        .map(|index| {
            let seed = base.seed.wrapping_add(index as u64);
            let mut cell = CellSettings { train: TrainConfig { seed, ..base.clone() }, descriptions: None };
            let mut rest = index;
            let mut settings = Vec::with_capacity(axes.len());
            for axis in axes.iter().rev() {
                let i = rest % axis.len();
                rest /= axis.len();
                settings.push((axis.name().to_string(), axis.apply(i, &mut cell)));
            }
            settings.reverse();
            let data = match cell.descriptions {
                Some(k) => train_all.take_per_class(k),
                None => train_all.clone(),
            };
            let run = train(&data, &world.vocab, &world.weights, &cell.train)?;
            let b = split_accuracies(world, &run.checkpoint, &base_ids)?[2];
            let n = split_accuracies(world, &run.checkpoint, &novel_ids)?[2];
            Ok(SweepCell { index, settings, seed, scores: scores(b, n), final_loss: run.checkpoint.final_loss })
        })
        .collect::<Result<Vec<_>>>()?;

    let empty = crate::trainer::PromptCheckpoint::empty(&world.weights);
    let b = split_accuracies(world, &empty, &base_ids)?[0];
    let n = split_accuracies(world, &empty, &novel_ids)?[0];
    Ok(SweepReport { axes: axes.iter().map(|a| a.name().to_string()).collect(), baseline: scores(b, n), cells })
}

fn scores(base: f64, novel: f64) -> SplitScores {
    let hm = crate::zeroshot_eval::harmonic_mean(base, novel).unwrap_or(0.0);
    SplitScores { base, novel, hm }
}

impl SweepReport {
    fn headers(&self) -> Vec<String> {
        let mut h: Vec<String> = self.axes.clone();
        h.extend(["seed", "base", "novel", "hm", "final_loss"].map(String::from));
        h
    }

    fn row(&self, c: &SweepCell, pct: bool) -> Vec<String> {
        let f = |v: f64| if pct { format!("{:.2}", 100.0 * v) } else { v.to_string() };
        let mut r: Vec<String> = c.settings.iter().map(|(_, v)| v.clone()).collect();
        r.push(c.seed.to_string());
        r.extend([f(c.scores.base), f(c.scores.novel), f(c.scores.hm)]);
        r.push(c.final_loss.map_or(String::new(), |l| if pct { format!("{l:.5}") } else { l.to_string() }));
        r
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(self.headers()).map_err(io)?;
        for c in &self.cells {
            w.write_record(self.row(c, false)).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn render_text(&self) -> String {
        let mut t = Table::new(self.headers());
        for c in &self.cells {
            t.push(self.row(c, true));
        }
        format!(
            "{}\nplain-template baseline: base {:.2}, novel {:.2}, HM {:.2}\n",
            t.render(),
            100.0 * self.baseline.base,
            100.0 * self.baseline.novel,
            100.0 * self.baseline.hm
        )
    }
}
