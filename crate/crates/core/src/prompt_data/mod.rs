//! Curation of text-to-text training data: class-name inputs paired with
//! LLM-generated (or handcrafted) descriptions.

pub mod client;
pub mod dataset;
pub mod templates;


pub use client::{complete_with_retry, CompletionRequest, FixtureClient, HttpClient, LlmClient, LlmError, RetryPolicy};
pub use dataset::{
    assemble_dataset, assemble_handcrafted, build_inputs, generate_outputs, header_path, ClassRecord, DatasetMeta,
    GeneratedOutputs, PairSource, PromptDataset, PromptPair, Split,
};
pub use templates::{
    check_template, default_queries, render, QueryTemplate, ATTRIBUTE_TEMPLATES, CLIP_80_TEMPLATES,
    DEFAULT_INPUT_TEMPLATE, PLACEHOLDER,
};
