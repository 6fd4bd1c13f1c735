//! Desk-scale synthetic benchmark: a structured toy vocabulary and encoder,
//! class descriptions, image features and base-to-novel transfer.

pub mod experiment;
pub mod sweep;
pub mod world;

#[cfg(test)]
mod tests;

pub use experiment::{default_train_config, run_transfer, split_accuracies, SplitScores, TransferReport, TransferRun};
pub use sweep::{run_sweep, Axis, SweepCell, SweepReport};
pub use world::{attribute_word, class_name, SyntheticWorld, SyntheticWorldConfig, FILLER_WORDS, TEMPLATE_WORDS};
