use std::collections::BTreeMap;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::records::{UtteranceRecord, EOS_ID, SOS_ID};

use super::{ctc_loss, Architecture, Bound, Model, ModelError};

/// Loss terms and parameter gradients of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    /// Batch mean of CTC loss divided by target length.
    pub ctc: f64,
    /// Batch-mean attention loss; `None` for a pure CTC model.
    pub attention: Option<f64>,
    pub grads: BTreeMap<String, Tensor>,
}

/// Constant weights turning `dot(logprobs, w)` into the mean smoothed
/// cross-entropy against `targets`.
fn smoothed_targets(targets: &[u32], v: usize, smoothing: f64) -> Tensor {
    let n = targets.len() as f64;
    let off = if v > 1 { smoothing / (v - 1) as f64 } else { 0.0 };
    let on = 1.0 - smoothing;
    Tensor::from_fn(&[targets.len(), v], |i| {
        let q = if i % v == targets[i / v] as usize { on } else { off };
        -q / n
    })
}

impl Architecture {
    fn attention_loss_on(&self, g: &mut Graph, p: &Bound, states: NodeId, target: &[u32]) -> Result<NodeId, ModelError> {
        if target.is_empty() {
            return Err(ModelError::EmptyTarget);
        }
        let mut inputs = vec![SOS_ID];
        inputs.extend_from_slice(target);
        let mut outputs = target.to_vec();
        outputs.push(EOS_ID);
        let lp = self.decode_on(g, p, states, &inputs)?;
        let w = smoothed_targets(&outputs, self.vocab_size, self.config.loss_params.label_smoothing);
        Ok(g.dot(lp, &w)?)
    }

    /// Scalar node for `weight_ctc·ctc + weight_attn·attention` of one utterance.
    fn utterance_loss_on(
        &self,
        g: &mut Graph,
        p: &Bound,
        rec: &UtteranceRecord,
        weight_ctc: f64,
        weight_attn: f64,
    ) -> Result<(NodeId, f64, Option<f64>), ModelError> {
        let enc = self.encode_on(g, p, &rec.features)?;
        let blank = self.config.decoder_params.ctc.blank_id;
        let (ctc, grad) = ctc_loss(g.value(enc.logprobs), &rec.token_ids, blank)?;
        let ctc_node = g.external_loss(enc.logprobs, ctc, grad)?;
        let mut total = g.mul_scalar(ctc_node, weight_ctc);
        let mut attn = None;
        if self.is_joint() {
            let a = self.attention_loss_on(g, p, enc.states, &rec.token_ids)?;
            attn = Some(g.value(a).item());
            let scaled = g.mul_scalar(a, weight_attn);
            total = g.add(total, scaled)?;
        }
        Ok((total, ctc, attn))
    }
}

/// Teacher-forced cross-entropy of `<sos>+target → target+<eos>`, averaged
/// over positions.
pub fn attention_loss(model: &Model, states: &Tensor, target: &[u32]) -> Result<f64, ModelError> {
    if !model.has_attention_decoder() {
        return Err(ModelError::NotJointModel);
    }
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, false);
    let s = g.constant(states.clone());
    let node = model.arch.attention_loss_on(&mut g, &p, s, target)?;
    Ok(g.value(node).item())
}

/// `λ·mean(ctc/|y|) + (1−λ)·mean(attention)`, with the CTC term of each
/// utterance normalized by its target length. A pure CTC model has λ = 1.
pub fn joint_loss(model: &Model, batch: &[&UtteranceRecord]) -> Result<f64, ModelError> {
    Ok(evaluate_batch(model, batch, false)?.loss)
}

/// [`joint_loss`] together with its gradient for every parameter.
pub fn loss_and_grads(model: &Model, batch: &[&UtteranceRecord]) -> Result<BatchLoss, ModelError> {
    evaluate_batch(model, batch, true)
}

fn evaluate_batch(model: &Model, batch: &[&UtteranceRecord], with_grads: bool) -> Result<BatchLoss, ModelError> {
    let arch = &model.arch;
    let n = batch.len().max(1) as f64;
    let lambda = arch.config.ctc_weight();
    let wa = (1.0 - lambda) / n;
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    let (mut loss, mut ctc_sum, mut attn_sum) = (0.0, 0.0, 0.0);
    // one unpadded graph per utterance; gradients accumulate in batch order
    for rec in batch {
        let mut g = Graph::new();
        let p = model.params.bind(&mut g, with_grads);
        let len = rec.token_ids.len().max(1) as f64;
        let (node, ctc, attn) = arch.utterance_loss_on(&mut g, &p, rec, lambda / (n * len), wa)?;
        loss += g.value(node).item();
        ctc_sum += ctc / len;
        attn_sum += attn.unwrap_or(0.0);
        if with_grads {
            let mut back = g.backward(node)?;
            for (name, &id) in p.iter() {
                let gv = back.take(&g, id);
                match grads.get_mut(name) {
                    Some(acc) => acc.data_mut().iter_mut().zip(gv.data()).for_each(|(a, b)| *a += b),
                    None => {
                        grads.insert(name.clone(), gv);
                    }
                }
            }
        }
    }
    Ok(BatchLoss {
        loss,
        ctc: ctc_sum / n,
        attention: arch.is_joint().then_some(attn_sum / n),
        grads,
    })
}
