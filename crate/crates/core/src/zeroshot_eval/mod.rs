//! Zero-shot classification of precomputed image features with text heads,
//! and the reported metrics.

pub mod classify;
pub mod features;
pub mod head;
pub mod report;

#[cfg(test)]
mod tests;

pub use classify::{
    aggregate, classify, confidence_report, harmonic_mean, per_class_accuracy, top1_accuracy, Classification, Confidence,
};
pub use features::{synthesize_images, ImageFeatureSet};
pub use head::{
    build_head, build_head_adapter, build_head_ensemble, plain_template_head, ClassifierHead, HeadProvenance,
    DEFAULT_TEMPERATURE,
};
pub use report::{evaluate, ClassAccuracy, EvalReport, Table};
