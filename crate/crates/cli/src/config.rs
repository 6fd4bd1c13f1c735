//! JSON run configuration. Every field is optional in the file; command-line
//! flags are applied on top, and the resolved value is what the run manifest records.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use protext::numerics::ScheduleKind;
use protext::prompt_data::{RetryPolicy, DEFAULT_INPUT_TEMPLATE};
use protext::synthetic::SyntheticWorldConfig;
use protext::trainer::{AdapterConfig, AdapterKind, TrainConfig};
use protext::zeroshot_eval::DEFAULT_TEMPERATURE;
use serde::{Deserialize, Serialize};

use crate::args::{AdapterArg, ScheduleArg, TrainFlags, WorldFlags};
use crate::error::{CliError, CliResult};
use crate::manifest::MANIFEST_VERSION;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub log_level: Option<String>,
    pub paths: Paths,
    /// Training settings; commands fall back to their own defaults when absent.
    pub train: Option<TrainConfig>,
    /// When set, `train` fits an output adapter instead of prompts.
    pub adapter: Option<AdapterConfig>,
    pub curate: CurateSettings,
    pub eval: EvalSettings,
    pub inspect: InspectSettings,
    pub ablate: AblateSettings,
    /// World settings for `synthetic` and `ablate`. Its seeds are derived from the run seed.
    pub synthetic: SyntheticWorldConfig,
    pub export_world: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub vocab: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub adapter: Option<PathBuf>,
    pub classes: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Handcrafted {
    /// CLIP's 80 ImageNet templates.
    Clip80,
    /// Attribute-style templates.
    Attribute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurateSettings {
    pub per_query: usize,
    pub num_queries: Option<usize>,
    pub handcrafted: Option<Handcrafted>,
    pub template: String,
    pub retry: RetryPolicy,
}

impl Default for CurateSettings {
    fn default() -> Self {
        Self {
            per_query: 10,
            num_queries: None,
            handcrafted: None,
            template: DEFAULT_INPUT_TEMPLATE.to_string(),
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// Class-name template encoded with learned prompts.
    Prompted,
    /// Class-name template without prompts.
    Plain,
    /// Mean of description features per class.
    Ensembled,
    /// Class-name template through a trained output adapter.
    Adapter,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Prompted => "prompted",
            HeadKind::Plain => "plain",
            HeadKind::Ensembled => "ensembled",
            HeadKind::Adapter => "adapter",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub head: HeadKind,
    pub temperature: f64,
    pub template: String,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { head: HeadKind::Prompted, temperature: DEFAULT_TEMPERATURE, template: DEFAULT_INPUT_TEMPLATE.to_string() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InspectSettings {
    pub k: usize,
}

impl Default for InspectSettings {
    fn default() -> Self {
        Self { k: 5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSettings {
    pub axes: Vec<String>,
}

/// A loaded `--config` file. Manifests carry the command they were written by.
pub struct LoadedConfig {
    pub config: RunConfig,
    pub command: Option<String>,
}

pub fn load(path: &Path) -> CliResult<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}: not valid JSON: {e}", path.display())))?;
    let is_manifest = value.get("manifest_version").and_then(|v| v.as_str()) == Some(MANIFEST_VERSION);
    let (body, command) = if is_manifest {
        let command = value.get("command").and_then(|c| c.as_str()).map(String::from);
        (value.get("config").cloned().unwrap_or_default(), command)
    } else {
        (value, None)
    };
    let config = serde_json::from_value(body)
        .map_err(|e| CliError::validation(format!("{}: invalid run config: {e}", path.display())))?;
    Ok(LoadedConfig { config, command })
}

pub fn apply_train(base: &mut TrainConfig, flags: &TrainFlags) -> CliResult<()> {
    macro_rules! set {
        ($($field:ident <- $flag:ident),* $(,)?) => {
            $(if let Some(v) = flags.$flag.clone() { base.$field = v; })*
        };
    }
    set!(
        prompt_length <- prompt_length,
        prompt_depth <- prompt_depth,
        epochs <- epochs,
        batch_size <- batch_size,
        lr <- lr,
        warmup_epochs <- warmup_epochs,
        weight_decay <- weight_decay,
        temperature <- loss_temperature,
    );
    if let Some(s) = flags.schedule {
        base.schedule = match s {
            ScheduleArg::Constant => ScheduleKind::ConstantAfterWarmup,
            ScheduleArg::Cosine => ScheduleKind::CosineAfterWarmup,
        };
    }
    if let Some(l) = &flags.loss {
        base.loss = l.parse()?;
    }
    if let Some(t) = &flags.target {
        base.target = t.parse()?;
    }
    if let Some(text) = &flags.init_text {
        base.init_text = Some(text.clone());
    }
    if flags.random_init {
        base.init_text = None;
    }
    if flags.raw_features {
        base.normalize_features = false;
    }
    Ok(())
}

pub fn apply_world(base: &mut SyntheticWorldConfig, flags: &WorldFlags) {
    if let Some(c) = flags.classes {
        base.classes = c;
        // Keep the split consistent when only the total changes.
        if flags.base_classes.is_none() && flags.novel_classes.is_none() {
            base.base_classes = c / 2;
            base.novel_classes = c - c / 2;
        }
    }
    if let Some(b) = flags.base_classes {
        base.base_classes = b;
    }
    if let Some(n) = flags.novel_classes {
        base.novel_classes = n;
    }
    if let Some(d) = flags.descriptions {
        base.descriptions_per_class = d;
    }
    if let Some(s) = flags.sigma {
        base.sigma = s;
    }
    if let Some(i) = flags.images_per_class {
        base.images_per_class = i;
    }
    if let Some(a) = flags.attributes {
        base.attributes_per_class = a;
    }
    if let Some(s) = flags.attribute_spread {
        base.attribute_spread = s;
    }
}

pub fn apply_adapter(
    base: Option<AdapterConfig>,
    kind: Option<AdapterArg>,
    alpha: Option<f64>,
    reduction: Option<usize>,
) -> Option<AdapterConfig> {
    let mut cfg = match (base, kind) {
        (None, None) => return None,
        (Some(c), _) => c,
        (None, Some(_)) => AdapterConfig::default(),
    };
    if let Some(k) = kind {
        cfg.kind = match k {
            AdapterArg::Linear => AdapterKind::Linear,
            AdapterArg::Mlp => AdapterKind::Mlp,
        };
    }
    if let Some(a) = alpha {
        cfg.alpha = a;
    }
    if let Some(r) = reduction {
        cfg.reduction = r;
    }
    Some(cfg)
}
