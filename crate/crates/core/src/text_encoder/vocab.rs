use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use crate::error::{Error, Result};

/// Word-level vocabulary with reserved special tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    version: String,
    tokens: Vec<String>,
    sos: u32,
    eos: u32,
    pad: u32,
    unk: u32,
    index: HashMap<String, u32>,
}

/// On-disk form: `{"version", "tokens", "sos", "eos", "pad", "unk"}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct VocabFile {
    version: String,
    tokens: Vec<String>,
    sos: u32,
    eos: u32,
    pad: u32,
    unk: u32,
}

impl TryFrom<VocabFile> for Vocabulary {
    type Error = Error;

    fn try_from(f: VocabFile) -> Result<Self> {
        Vocabulary::new(f.version, f.tokens, f.sos, f.eos, f.pad, f.unk)
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile { version: v.version, tokens: v.tokens, sos: v.sos, eos: v.eos, pad: v.pad, unk: v.unk }
    }
}

pub const SOS_TOKEN: &str = "<|startoftext|>";
pub const EOS_TOKEN: &str = "<|endoftext|>";
pub const PAD_TOKEN: &str = "<|pad|>";
pub const UNK_TOKEN: &str = "<|unk|>";

impl Vocabulary {
    pub fn new(version: impl Into<String>, tokens: Vec<String>, sos: u32, eos: u32, pad: u32, unk: u32) -> Result<Self> {
        let n = tokens.len() as u32;
        let specials = [sos, eos, pad, unk];
        if specials.iter().any(|&id| id >= n) {
            return Err(Error::invalid(format!("special token ids {specials:?} must be < vocabulary size {n}")));
        }
        for i in 0..specials.len() {
            for j in i + 1..specials.len() {
                if specials[i] == specials[j] {
                    return Err(Error::invalid(format!("special token ids must be distinct, got {specials:?}")));
                }
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate token {t:?} in vocabulary")));
            }
        }
        Ok(Self { version: version.into(), tokens, sos, eos, pad, unk, index })
    }

    /// Vocabulary of `words` followed by the four special tokens.
    pub fn from_words<S: AsRef<str>>(version: &str, words: &[S]) -> Result<Self> {
        let mut tokens: Vec<String> = words.iter().map(|w| w.as_ref().to_string()).collect();
        let base = tokens.len() as u32;
        tokens.extend([SOS_TOKEN, EOS_TOKEN, PAD_TOKEN, UNK_TOKEN].map(String::from));
        Self::new(version, tokens, base, base + 1, base + 2, base + 3)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn sos_id(&self) -> u32 {
        self.sos
    }

    pub fn eos_id(&self) -> u32 {
        self.eos
    }

    pub fn pad_id(&self) -> u32 {
        self.pad
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn is_special(&self, id: u32) -> bool {
        id == self.sos || id == self.eos || id == self.pad || id == self.unk
    }
}

/// Fixed-length id sequence `[SOS, words.., EOS, PAD..]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub eos_position: usize,
    pub source_text: String,
}

impl TokenSequence {
    /// Number of word tokens between SOS and EOS.
    pub fn word_count(&self) -> usize {
        self.eos_position - 1
    }
}

/// Lowercases and splits on whitespace; every punctuation character is its own word.
pub fn normalize_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() || ch == '_' {
            cur.push(ch);
            continue;
        }
        if !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            words.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

/// Word ids without SOS/EOS; unknown words map to the unknown token.
pub fn word_ids(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    normalize_words(text).iter().map(|w| vocab.id(w).unwrap_or(vocab.unk)).collect()
}

pub fn tokenize(text: &str, vocab: &Vocabulary, config: &EncoderConfig) -> Result<TokenSequence> {
    let ctx = config.context_length;
    if ctx < 2 {
        return Err(Error::invalid(format!("context length {ctx} cannot hold SOS and EOS")));
    }
    let mut words = word_ids(text, vocab);
    if words.is_empty() {
        return Err(Error::invalid(format!("text {text:?} is empty after normalization")));
    }
    words.truncate(ctx - 2);
    let mut ids = Vec::with_capacity(ctx);
    ids.push(vocab.sos);
    ids.extend_from_slice(&words);
    ids.push(vocab.eos);
    let eos_position = ids.len() - 1;
    ids.resize(ctx, vocab.pad);
    Ok(TokenSequence { ids, eos_position, source_text: text.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vocabulary, EncoderConfig) {
        let tokens = ["a", "photo", "of", "dog", "<sos>", "<eos>", "<pad>", "<unk>"];
        let v = Vocabulary::new("toy", tokens.map(String::from).to_vec(), 4, 5, 6, 7).unwrap();
        let cfg = EncoderConfig { context_length: 8, ..EncoderConfig::toy() };
        (v, cfg)
    }

    #[test]
    fn direct_lookup() {
        let (v, cfg) = toy();
        let t = tokenize("a photo of a dog", &v, &cfg).unwrap();
        assert_eq!(t.ids, vec![4, 0, 1, 2, 0, 3, 5, 6]);
        assert_eq!(t.eos_position, 6);
    }

    #[test]
    fn empty_text_is_an_error() {
        let (v, cfg) = toy();
        assert!(tokenize("", &v, &cfg).is_err());
        assert!(tokenize("  \t ", &v, &cfg).is_err());
    }

    #[test]
    fn long_text_is_truncated_with_eos_kept() {
        let (v, _) = toy();
        let cfg = EncoderConfig { context_length: 77, ..EncoderConfig::toy() };
        let text = vec!["dog"; 200].join(" ");
        let t = tokenize(&text, &v, &cfg).unwrap();
        assert_eq!(t.ids.len(), 77);
        assert_eq!(t.ids[76], v.eos_id());
        assert_eq!(t.eos_position, 76);
    }

    #[test]
    fn punctuation_and_case() {
        assert_eq!(normalize_words("A Rose, a type of FLOWER."), ["a", "rose", ",", "a", "type", "of", "flower", "."]);
        let (v, cfg) = toy();
        let t = tokenize("Cat!", &v, &cfg).unwrap();
        assert_eq!(&t.ids[..4], &[4, 7, 7, 5]);
    }

    #[test]
    fn vocabulary_validation() {
        let words = ["a", "a"].map(String::from).to_vec();
        assert!(Vocabulary::from_words("v", &words).is_err());
        let tokens = ["x", "y", "z", "w"].map(String::from).to_vec();
        assert!(Vocabulary::new("v", tokens.clone(), 0, 0, 1, 2).is_err());
        assert!(Vocabulary::new("v", tokens, 0, 1, 2, 9).is_err());
    }

    #[test]
    fn vocabulary_json_round_trip() {
        let (v, _) = toy();
        let s = serde_json::to_string(&v).unwrap();
        assert!(s.contains("\"sos\":4"));
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert!(serde_json::from_str::<Vocabulary>(r#"{"version":"v","tokens":["a"],"sos":0,"eos":0,"pad":0,"unk":0}"#).is_err());
    }
}
