//! Prompt optimization against the contextual-mapping objective, plus
//! adapter baselines and the checkpoint format.

pub mod adapter;
pub mod config;
pub mod engine;
pub mod loss;
pub mod prompt;
pub mod targets;


pub use adapter::{train_adapter, AdapterConfig, AdapterKind, AdapterRun, AdapterWeights};
pub use config::{LossKind, TargetMode, TrainConfig};
pub use engine::{LossTrace, TraceRow};
pub use loss::{batch_mapping_loss, mapping_loss, record_loss};
pub use prompt::{train, PromptCheckpoint, TrainRun, CHECKPOINT_VERSION};
pub use targets::{ensemble_mean, ensemble_targets, frozen_feature, frozen_features};
