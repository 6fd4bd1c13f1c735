//! Forward pass of the frozen text transformer, with and without deep prompts.
//!
//! Architecture: token + positional embeddings, `num_layers` pre-norm blocks
//! (causal multi-head attention, GELU MLP), final layer norm, read-out at the
//! EOS position, linear projection, L2 normalization.
//!
//! With a [`PromptSet`] of length `T` and depth `J`, the layer-0 input is
//! `[SOS, P0 (T rows), words.., EOS, PAD..]` and positional embeddings are
//! added after the splice. Before block `j` for `1 <= j < J` the `T` prompt
//! rows are overwritten with `Pj`. EOS moves right by `T`.

use serde::{Deserialize, Serialize};

use super::prompts::PromptSet;
use super::vocab::TokenSequence;
use super::weights::{BlockWeights, EncoderWeights};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Encoder output feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextFeature {
    pub vector: Tensor,
    pub normalized: bool,
}

impl TextFeature {
    pub fn data(&self) -> &[f64] {
        self.vector.data()
    }

    pub fn dim(&self) -> usize {
        self.vector.numel()
    }
}

/// Handles into a recorded forward pass.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    /// Unit-norm `[d]` feature.
    pub feature: Var,
    /// Projected `[1, d]` read-out before normalization.
    pub projected: Var,
    /// Input to each block, after prompt replacement.
    pub block_inputs: Vec<Var>,
    pub block_outputs: Vec<Var>,
    pub eos_position: usize,
}

/// Values captured from a full-context forward pass.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    pub feature: TextFeature,
    pub block_inputs: Vec<Tensor>,
    pub block_outputs: Vec<Tensor>,
    pub eos_position: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rows {
    /// Every position of the context.
    Full,
    /// Positions up to and including EOS; identical feature, less work.
    ThroughEos,
}

fn check_ids(tokens: &TokenSequence, weights: &EncoderWeights) -> Result<()> {
    let vocab = weights.vocab_size() as u32;
    if let Some(bad) = tokens.ids.iter().find(|&&id| id >= vocab) {
        return Err(Error::invalid(format!("token id {bad} out of range for vocabulary of {vocab}")));
    }
    let ctx = weights.config.context_length;
    if tokens.ids.len() != ctx || tokens.eos_position >= ctx || tokens.eos_position == 0 {
        return Err(Error::invalid(format!(
            "token sequence of length {} (eos at {}) does not fit context length {ctx}",
            tokens.ids.len(),
            tokens.eos_position
        )));
    }
    Ok(())
}

fn gather(table: &Tensor, ids: &[u32]) -> Tensor {
    let d = table.cols();
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        data.extend_from_slice(table.row(id as usize));
    }
    Tensor::from_parts(vec![ids.len(), d], data)
}

/// Records the forward pass on `tape`. Prompt layers become parameters named
/// by [`PromptSet::param_name`]; encoder weights are borrowed constants.
pub fn record<'a>(
    tape: &mut Tape<'a>,
    tokens: &TokenSequence,
    prompts: Option<&'a PromptSet>,
    weights: &'a EncoderWeights,
    rows: Rows,
) -> Result<EncoderVars> {
    check_ids(tokens, weights)?;
    let cfg = &weights.config;
    let ctx = cfg.context_length;
    let t = prompts.map_or(0, |p| p.length);
    if let Some(p) = prompts {
        p.validate(weights)?;
        if tokens.eos_position + t >= ctx {
            return Err(Error::Capacity(format!(
                "{t} prompt rows push EOS of {:?} to position {} past context length {ctx}",
                tokens.source_text,
                tokens.eos_position + t
            )));
        }
    }
    let eos = tokens.eos_position + t;
    let n = match rows {
        Rows::Full => ctx,
        Rows::ThroughEos => eos + 1,
    };

    let mut x = if t > 0 {
        let p = prompts.expect("t > 0 implies prompts");
        let sos = tape.constant_owned(gather(&weights.token_embedding, &tokens.ids[..1]));
        let p0 = tape.param(PromptSet::param_name(0), &p.layers[0]);
        let rest = tape.constant_owned(gather(&weights.token_embedding, &tokens.ids[1..n - t]));
        tape.concat_rows(&[sos, p0, rest])?
    } else {
        tape.constant_owned(gather(&weights.token_embedding, &tokens.ids[..n]))
    };
    let pos = tape.constant_owned(weights.positional_embedding.slice_rows(0, n)?);
    x = tape.add(x, pos)?;

    let mut block_inputs = Vec::with_capacity(cfg.num_layers);
    let mut block_outputs = Vec::with_capacity(cfg.num_layers);
    for (j, block) in weights.layers.iter().enumerate() {
        if let Some(p) = prompts {
            if j >= 1 && j < p.depth && t > 0 {
                let head = tape.slice_rows(x, 0, 1)?;
                let pj = tape.param(PromptSet::param_name(j), &p.layers[j]);
                let tail = tape.slice_rows(x, 1 + t, n)?;
                x = tape.concat_rows(&[head, pj, tail])?;
            }
        }
        block_inputs.push(x);
        x = record_block(tape, x, block, cfg.num_heads, cfg.layer_norm_eps)?;
        block_outputs.push(x);
    }

    let row = tape.slice_rows(x, eos, eos + 1)?;
    let g = tape.constant(&weights.ln_final_weight);
    let b = tape.constant(&weights.ln_final_bias);
    let row = tape.layer_norm(row, g, b, cfg.layer_norm_eps)?;
    let proj = tape.constant(&weights.text_projection);
    let projected = tape.matmul(row, proj)?;
    let f = tape.l2_normalize(projected)?;
    let feature = tape.reshape(f, vec![cfg.projection_dim])?;
    Ok(EncoderVars { feature, projected, block_inputs, block_outputs, eos_position: eos })
}

fn record_block<'a>(tape: &mut Tape<'a>, x: Var, w: &'a BlockWeights, heads: usize, eps: f64) -> Result<Var> {
    let d = tape.value(x).cols();
    let hd = d / heads;

    let g1 = tape.constant(&w.ln_1_weight);
    let b1 = tape.constant(&w.ln_1_bias);
    let h = tape.layer_norm(x, g1, b1, eps)?;
    let w_in = tape.constant(&w.in_proj_weight);
    let b_in = tape.constant(&w.in_proj_bias);
    let qkv = tape.matmul(h, w_in)?;
    let qkv = tape.add_row(qkv, b_in)?;

    let inv_sqrt = 1.0 / (hd as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for i in 0..heads {
        let q = tape.slice_cols(qkv, i * hd, (i + 1) * hd)?;
        let k = tape.slice_cols(qkv, d + i * hd, d + (i + 1) * hd)?;
        let v = tape.slice_cols(qkv, 2 * d + i * hd, 2 * d + (i + 1) * hd)?;
        let kt = tape.transpose(k)?;
        let s = tape.matmul(q, kt)?;
        let s = tape.scale(s, inv_sqrt);
        let a = tape.softmax(s, true)?;
        outs.push(tape.matmul(a, v)?);
    }
    let o = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let w_out = tape.constant(&w.out_proj_weight);
    let b_out = tape.constant(&w.out_proj_bias);
    let o = tape.matmul(o, w_out)?;
    let o = tape.add_row(o, b_out)?;
    let x = tape.add(x, o)?;

    let g2 = tape.constant(&w.ln_2_weight);
    let b2 = tape.constant(&w.ln_2_bias);
    let h = tape.layer_norm(x, g2, b2, eps)?;
    let w_fc = tape.constant(&w.fc_weight);
    let b_fc = tape.constant(&w.fc_bias);
    let f = tape.matmul(h, w_fc)?;
    let f = tape.add_row(f, b_fc)?;
    let f = tape.gelu(f);
    let w_pr = tape.constant(&w.proj_weight);
    let b_pr = tape.constant(&w.proj_bias);
    let m = tape.matmul(f, w_pr)?;
    let m = tape.add_row(m, b_pr)?;
    tape.add(x, m)
}

fn finish(tape: &Tape<'_>, vars: &EncoderVars) -> Result<TextFeature> {
    tape.check()?;
    Ok(TextFeature { vector: tape.value(vars.feature).clone(), normalized: true })
}

/// Frozen-path feature of a token sequence.
pub fn encode(tokens: &TokenSequence, weights: &EncoderWeights) -> Result<TextFeature> {
    let mut tape = Tape::new();
    let vars = record(&mut tape, tokens, None, weights, Rows::ThroughEos)?;
    finish(&tape, &vars)
}

/// Prompted feature of a token sequence.
pub fn encode_prompted(tokens: &TokenSequence, prompts: &PromptSet, weights: &EncoderWeights) -> Result<TextFeature> {
    let mut tape = Tape::new();
    let vars = record(&mut tape, tokens, Some(prompts), weights, Rows::ThroughEos)?;
    finish(&tape, &vars)
}

/// Full-context forward pass exposing every block input and output.
pub fn trace(tokens: &TokenSequence, prompts: Option<&PromptSet>, weights: &EncoderWeights) -> Result<EncoderTrace> {
    let mut tape = Tape::new();
    let vars = record(&mut tape, tokens, prompts, weights, Rows::Full)?;
    let feature = finish(&tape, &vars)?;
    Ok(EncoderTrace {
        feature,
        block_inputs: vars.block_inputs.iter().map(|v| tape.value(*v).clone()).collect(),
        block_outputs: vars.block_outputs.iter().map(|v| tape.value(*v).clone()).collect(),
        eos_position: vars.eos_position,
    })
}
