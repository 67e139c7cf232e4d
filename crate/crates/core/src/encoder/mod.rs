//! Prompt construction and the encoder interface.
//!
//! Each view becomes `sentence ⊕ head-slot [MASK] tail-slot`. An encoder
//! reads the masked position and returns a hidden vector plus a softmax
//! distribution over its vocabulary.

mod mock;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use mock::{MockBackend, MockCache};

use crate::error::{Error, Result};
use crate::semifactual::{EntitySlot, MarkedSentence, ViewKind, HEAD_START, TAIL_START};

pub const MASK: &str = "[MASK]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptedInput {
    pub instance_id: String,
    pub tokens: Vec<String>,
    pub mask_position: usize,
    pub view_kind: ViewKind,
    /// Length of the `head [MASK] tail` suffix, which truncation never cuts.
    pub suffix_len: usize,
}

fn slot_tokens(slot: &EntitySlot, special: &str, which: &str) -> Result<Vec<String>> {
    match slot {
        EntitySlot::Masked => Ok(vec![special.to_string()]),
        EntitySlot::Surface(s) => {
            let toks: Vec<String> = s.split_whitespace().map(str::to_string).collect();
            if toks.is_empty() {
                Err(Error::InvalidInput(format!(
                    "empty {which} surface in prompt"
                )))
            } else {
                Ok(toks)
            }
        }
    }
}

/// `view ⊕ head [MASK] tail`; replaced entities appear as `<h>` / `<t>`.
pub fn build_prompt(view: &MarkedSentence, instance_id: &str) -> Result<PromptedInput> {
    if view.tokens.is_empty() {
        return Err(Error::InvalidInput(format!("{instance_id}: empty view")));
    }
    let head = slot_tokens(&view.head, HEAD_START, "head")?;
    let tail = slot_tokens(&view.tail, TAIL_START, "tail")?;
    let mut tokens = view.tokens.clone();
    tokens.extend(head);
    let mask_position = tokens.len();
    tokens.push(MASK.to_string());
    tokens.extend(tail);
    Ok(PromptedInput {
        instance_id: instance_id.to_string(),
        suffix_len: tokens.len() - view.tokens.len(),
        tokens,
        mask_position,
        view_kind: view.view_kind,
    })
}

/// Drops sentence-body tokens from the right until the prompt fits.
pub fn fit_to_length(prompt: &PromptedInput, max_len: usize) -> Result<PromptedInput> {
    if prompt.tokens.len() <= max_len {
        return Ok(prompt.clone());
    }
    if prompt.suffix_len > max_len {
        return Err(Error::PromptTooLong {
            id: prompt.instance_id.clone(),
            max_len,
            needed: prompt.suffix_len,
        });
    }
    let body_len = prompt.tokens.len() - prompt.suffix_len;
    let keep = max_len - prompt.suffix_len;
    let mut tokens: Vec<String> = prompt.tokens[..keep].to_vec();
    tokens.extend_from_slice(&prompt.tokens[body_len..]);
    Ok(PromptedInput {
        mask_position: prompt.mask_position - (body_len - keep),
        tokens,
        ..prompt.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationRepresentation {
    pub instance_id: String,
    pub view: ViewKind,
    pub hidden: Vec<f64>,
    pub word_dist: Vec<f64>,
}

/// Row-aligned encoder outputs for a batch.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    pub hidden: Array2<f64>,
    pub word_dist: Array2<f64>,
}

/// A masked-language encoder with trainable parameters. Parameters are
/// exchanged as one flat vector so optimizers and gradient checks stay
/// backend-agnostic.
pub trait EncoderBackend {
    type Cache;

    fn hidden_dim(&self) -> usize;
    fn vocab(&self) -> &[String];
    fn max_len(&self) -> usize;

    fn forward(&self, batch: &[PromptedInput], mode: Mode) -> Result<(EncodedBatch, Self::Cache)>;

    /// Gradient of a scalar loss w.r.t. the flat parameters, given its
    /// gradients w.r.t. the hidden vectors and word distributions.
    fn backward(
        &self,
        cache: &Self::Cache,
        d_hidden: &Array2<f64>,
        d_word_dist: &Array2<f64>,
    ) -> Vec<f64>;

    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]) -> Result<()>;
}

/// Fits prompts to the backend length and encodes them.
pub fn encode<B: EncoderBackend>(
    batch: &[PromptedInput],
    backend: &B,
    mode: Mode,
) -> Result<Vec<RelationRepresentation>> {
    let fitted: Vec<PromptedInput> = batch
        .iter()
        .map(|p| fit_to_length(p, backend.max_len()))
        .collect::<Result<_>>()?;
    let (out, _) = backend.forward(&fitted, mode)?;
    Ok(fitted
        .iter()
        .enumerate()
        .map(|(i, p)| RelationRepresentation {
            instance_id: p.instance_id.clone(),
            view: p.view_kind,
            hidden: out.hidden.row(i).to_vec(),
            word_dist: out.word_dist.row(i).to_vec(),
        })
        .collect())
}

/// Keeps the `k` most probable entries (ties by index) and renormalizes.
pub fn truncate_top_k(dist: &[f64], k: usize) -> Vec<f64> {
    if k >= dist.len() {
        return dist.to_vec();
    }
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; dist.len()];
    let mut mass = 0.0;
    for &i in &order[..k] {
        out[i] = dist[i];
        mass += dist[i];
    }
    if mass > 0.0 {
        out.iter_mut().for_each(|v| *v /= mass);
    }
    out
}
