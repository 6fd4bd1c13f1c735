//! Text-only prompt learning for a frozen CLIP-style text encoder.
//!
//! Learnable prompt vectors are trained so that the prompted feature of a
//! class-name template (`"a photo of a {class}"`) matches the frozen feature
//! of LLM-written descriptions of that class. The learned prompts are then
//! used for zero-shot classification over precomputed image features.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod container;
pub mod error;
pub mod numerics;
pub mod prompt_data;
pub mod synthetic;
pub mod text_encoder;
pub mod trainer;
pub mod zeroshot_eval;

pub use error::{Error, Result};
