//! Word tokenizer, frozen CLIP-style text transformer and deep prompt injection.

pub mod config;
pub mod encoder;
pub mod nearest;
pub mod prompts;
pub mod vocab;
pub mod weights;


pub use config::EncoderConfig;
pub use encoder::{encode, encode_prompted, record, trace, EncoderTrace, EncoderVars, Rows, TextFeature};
pub use nearest::{nearest_vocab_words, NearestWord};
pub use prompts::{PromptSet, DEFAULT_INIT_TEXT, PROMPT_INIT_STD};
pub use vocab::{normalize_words, tokenize, word_ids, TokenSequence, Vocabulary};
pub use weights::{BlockWeights, EncoderWeights, InitScales};
