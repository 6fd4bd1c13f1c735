use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::text_encoder::TextFeature;

use super::config::LossKind;

/// Records the batch mapping loss over paired `[d]` predictions and targets.
pub fn record_loss(tape: &mut Tape<'_>, preds: &[Var], targets: &[Var], kind: LossKind, temperature: f64) -> Result<Var> {
    if preds.len() != targets.len() {
        return Err(Error::shape(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    if preds.is_empty() {
        return Err(Error::invalid("loss over an empty batch"));
    }
    let b = preds.len() as f64;
    match kind {
        LossKind::Mse | LossKind::L1 => {
            let mut total: Option<Var> = None;
            for (&p, &t) in preds.iter().zip(targets) {
                let diff = tape.sub(p, t)?;
                let e = if kind == LossKind::Mse { tape.square(diff) } else { tape.abs(diff) };
                let per = tape.mean(e);
                total = Some(match total {
                    None => per,
                    Some(acc) => tape.add(acc, per)?,
                });
            }
            Ok(tape.scale(total.expect("non-empty batch"), 1.0 / b))
        }
        LossKind::Contrastive => {
            let stack = |tape: &mut Tape<'_>, vs: &[Var]| -> Result<Var> {
                let rows = vs
                    .iter()
                    .map(|&v| {
                        let d = tape.value(v).numel();
                        tape.reshape(v, vec![1, d])
                    })
                    .collect::<Result<Vec<_>>>()?;
                tape.concat_rows(&rows)
            };
            let p = stack(tape, preds)?;
            let t = stack(tape, targets)?;
            let tt = tape.transpose(t)?;
            let logits = tape.matmul(p, tt)?;
            let logits = tape.scale(logits, 1.0 / temperature);
            let eye = tape.constant_owned(Tensor::identity(preds.len()));
            let rows = tape.log_softmax(logits)?;
            let lt = tape.transpose(logits)?;
            let cols = tape.log_softmax(lt)?;
            let both = tape.add(rows, cols)?;
            let diag = tape.mul(both, eye)?;
            let s = tape.sum(diag);
            Ok(tape.scale(s, -0.5 / b))
        }
    }
}

/// Batch loss value for plain tensors.
pub fn batch_mapping_loss(preds: &[Tensor], targets: &[Tensor], kind: LossKind, temperature: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let p: Vec<Var> = preds.iter().map(|t| tape.constant(t)).collect();
    let t: Vec<Var> = targets.iter().map(|t| tape.constant(t)).collect();
    let loss = record_loss(&mut tape, &p, &t, kind, temperature)?;
    tape.check()?;
    Ok(tape.value(loss).data()[0])
}

/// Loss for a single pair. The contrastive loss of one pair is zero.
pub fn mapping_loss(prompted: &TextFeature, target: &TextFeature, kind: LossKind) -> Result<f64> {
    if prompted.dim() != target.dim() {
        return Err(Error::shape(format!("feature dimensions differ: {} vs {}", prompted.dim(), target.dim())));
    }
    batch_mapping_loss(
        std::slice::from_ref(&prompted.vector),
        std::slice::from_ref(&target.vector),
        kind,
        super::config::TrainConfig::default().temperature,
    )
}

/// Loss value and per-prediction gradients.
pub(crate) fn loss_and_grads(
    preds: &[Tensor],
    targets: &[&Tensor],
    kind: LossKind,
    temperature: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let names: Vec<String> = (0..preds.len()).map(|i| format!("pred.{i}")).collect();
    let p: Vec<Var> = preds.iter().zip(&names).map(|(t, n)| tape.param(n.clone(), t)).collect();
    let t: Vec<Var> = targets.iter().map(|t| tape.constant(t)).collect();
    let loss = record_loss(&mut tape, &p, &t, kind, temperature)?;
    let mut grads = tape.backward(loss, &names.iter().cloned().collect())?;
    let value = tape.value(loss).data()[0];
    let per = names.iter().map(|n| grads.remove(n).expect("requested gradient")).collect();
    Ok((value, per))
}
