use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ScheduleKind;
use crate::text_encoder::DEFAULT_INIT_TEXT;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `(1/d) * sum (p - g)^2` per sample, averaged over the batch.
    Mse,
    /// `(1/d) * sum |p - g|` per sample, averaged over the batch.
    L1,
    /// Symmetric InfoNCE with in-batch negatives.
    Contrastive,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Mse, LossKind::L1, LossKind::Contrastive];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::L1 => "l1",
            LossKind::Contrastive => "contrastive",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown loss kind {s:?}, expected mse, l1 or contrastive")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// Each pair maps its input to the feature of its own output.
    PerSample,
    /// Each pair maps its input to the ensembled feature of its class.
    Ensembled,
}

impl TargetMode {
    pub const ALL: [TargetMode; 2] = [TargetMode::PerSample, TargetMode::Ensembled];

    pub fn as_str(self) -> &'static str {
        match self {
            TargetMode::PerSample => "per-sample",
            TargetMode::Ensembled => "ensembled",
        }
    }
}

impl std::str::FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TargetMode::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown target mode {s:?}, expected per-sample or ensembled")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub prompt_length: usize,
    pub prompt_depth: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: ScheduleKind,
    pub warmup_epochs: usize,
    pub loss: LossKind,
    pub target: TargetMode,
    pub seed: u64,
    /// InfoNCE temperature; unused by the other loss kinds.
    pub temperature: f64,
    pub weight_decay: f64,
    /// Text whose token embeddings initialize the first prompt layer.
    pub init_text: Option<String>,
    /// Compare unit-norm features (default) or raw projected features.
    pub normalize_features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            prompt_length: 4,
            prompt_depth: 1,
            epochs: 10,
            batch_size: 32,
            lr: 0.03,
            schedule: ScheduleKind::CosineAfterWarmup,
            warmup_epochs: 5,
            loss: LossKind::Mse,
            target: TargetMode::PerSample,
            seed: 0,
            temperature: 0.07,
            weight_decay: 0.01,
            init_text: Some(DEFAULT_INIT_TEXT.to_string()),
            normalize_features: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prompt_depth == 0 {
            return Err(Error::invalid("prompt_depth must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        Ok(())
    }
}
