use super::layers::Module;
use super::transformer::{ModelVars, TransformerModel};
use crate::data::EOS;
use crate::error::{contract_err, Result};
use crate::kernels::argmax;
use crate::optim::OptimizerState;
use crate::tape::Tape;

/// A training batch of language-model chunks. Chunk `c` trains inputs
/// `c[..len-1]` against targets `c[1..]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LmBatch {
    pub chunks: Vec<Vec<usize>>,
}

impl LmBatch {
    pub fn new(chunks: Vec<Vec<usize>>) -> Result<Self> {
        if chunks.is_empty() {
            return contract_err("empty batch");
        }
        if let Some(c) = chunks.iter().find(|c| c.len() < 2) {
            return contract_err(format!("chunk of {} tokens has no target", c.len()));
        }
        Ok(LmBatch { chunks })
    }

    pub fn num_targets(&self) -> usize {
        self.chunks.iter().map(|c| c.len() - 1).sum()
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

type Backprop = Option<(Tape, ModelVars)>;

/// Summed cross-entropy of one chunk scaled by `scale`. With `grads` set the
/// tape is returned after backward so parameter gradients can be read.
fn chunk_loss(model: &TransformerModel, chunk: &[usize], scale: f64, grads: bool) -> Result<(f64, Backprop)> {
    let (inputs, targets) = (&chunk[..chunk.len() - 1], &chunk[1..]);
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, grads);
    let x = model.embed_ids(&mut tape, &vars, inputs)?;
    let outs = model.run_blocks(&mut tape, &vars, x, 0..model.config.n_layers)?;
    let logits = model.logits(&mut tape, &vars, *outs.last().expect("n_layers >= 1"))?;
    let loss = tape.cross_entropy_scaled(logits, targets, scale)?;
    let value = tape.value(loss)[0];
    if !grads {
        return Ok((value, None));
    }
    tape.backward(loss)?;
    Ok((value, Some((tape, vars))))
}

/// One monolithic optimizer step: every chunk is run forward and backward
/// on its own tape, in batch order, and gradients are summed into the
/// parameters before a single AdamW update. Returns the mean per-token loss.
pub fn finetune_step(model: &mut TransformerModel, batch: &LmBatch, opt: &mut OptimizerState) -> Result<f64> {
    let scale = 1.0 / batch.num_targets() as f64;
    let mut total = 0.0;
    for chunk in &batch.chunks {
        let (loss, tape) = chunk_loss(model, chunk, scale, true)?;
        let (tape, vars) = tape.expect("gradients requested");
        model.accumulate_grads(&tape, &vars)?;
        total += loss;
    }
    opt.step(&mut model.params_mut())?;
    Ok(total)
}

/// Mean per-token cross-entropy over a batch without touching parameters.
pub fn lm_batch_loss(model: &TransformerModel, batch: &LmBatch) -> Result<f64> {
    let scale = 1.0 / batch.num_targets() as f64;
    let mut total = 0.0;
    for chunk in &batch.chunks {
        total += chunk_loss(model, chunk, scale, false)?.0;
    }
    Ok(total)
}

/// Greedy continuation of `prompt` for up to `max_new` tokens, stopping
/// before EOS. The context is left-truncated to `max_seq_len`.
pub fn generate_greedy(model: &TransformerModel, prompt: &[usize], max_new: usize) -> Result<Vec<usize>> {
    if prompt.is_empty() {
        return contract_err("empty prompt");
    }
    let l = model.config.max_seq_len;
    let mut ctx = prompt.to_vec();
    let mut out = Vec::new();
    for _ in 0..max_new {
        let window = &ctx[ctx.len().saturating_sub(l)..];
        let (logits, _) = model.forward_full(window)?;
        let next = argmax(logits.row(logits.rows() - 1));
        if next == EOS {
            break;
        }
        out.push(next);
        ctx.push(next);
    }
    Ok(out)
}
