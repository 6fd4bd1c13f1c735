use serde::{Deserialize, Serialize};

use super::prompts::PromptSet;
use super::vocab::Vocabulary;
use super::weights::EncoderWeights;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NearestWord {
    pub token_id: u32,
    pub word: String,
    pub distance: f64,
}

/// `result[layer][row]` lists the `k` vocabulary tokens whose embeddings are
/// closest in Euclidean distance to that prompt vector, nearest first. Ties
/// go to the lower token id.
pub fn nearest_vocab_words(
    prompts: &PromptSet,
    weights: &EncoderWeights,
    vocab: &Vocabulary,
    k: usize,
) -> Result<Vec<Vec<Vec<NearestWord>>>> {
    let table = &weights.token_embedding;
    if vocab.len() != table.rows() {
        return Err(Error::invalid(format!(
            "vocabulary has {} tokens but the embedding table has {} rows",
            vocab.len(),
            table.rows()
        )));
    }
    if k > vocab.len() {
        return Err(Error::invalid(format!("k = {k} exceeds vocabulary size {}", vocab.len())));
    }
    prompts.validate(weights)?;
    let mut out = Vec::with_capacity(prompts.depth);
    for layer in &prompts.layers {
        let mut rows = Vec::with_capacity(layer.rows());
        for r in 0..layer.rows() {
            let p = layer.row(r);
            let mut scored: Vec<(f64, u32)> = (0..table.rows())
                .map(|id| {
                    let e = table.row(id);
                    let d2: f64 = p.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d2, id as u32)
                })
                .collect();
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            rows.push(
                scored
                    .into_iter()
                    .take(k)
                    .map(|(d2, id)| NearestWord {
                        token_id: id,
                        word: vocab.token(id).unwrap_or_default().to_string(),
                        distance: d2.sqrt(),
                    })
                    .collect(),
            );
        }
        out.push(rows);
    }
    Ok(out)
}
