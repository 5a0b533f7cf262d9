use std::collections::VecDeque;

use super::partition::StageSpec;
use crate::error::{contract_err, Result};
use crate::model::{Block, Embedder, Head, Module, TransformerModel};
use crate::optim::{AdamWConfig, OptimizerState};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// The parameters one stage owns. Parameter order is embedder, blocks,
/// head, so concatenating stages in order reproduces the full model's.
#[derive(Clone, Debug)]
pub struct StageModel {
    pub spec: StageSpec,
    pub embedder: Option<Embedder>,
    pub blocks: Vec<Block>,
    pub head: Option<Head>,
}

impl StageModel {
    /// Cuts `model` into stages following `specs`.
    pub fn split(model: TransformerModel, specs: &[StageSpec]) -> Vec<StageModel> {
        let TransformerModel {
            embedder,
            blocks,
            head,
            ..
        } = model;
        let mut embedder = Some(embedder);
        let mut head = Some(head);
        let mut blocks = blocks.into_iter();
        specs
            .iter()
            .map(|s| StageModel {
                spec: s.clone(),
                embedder: if s.holds_embedding { embedder.take() } else { None },
                blocks: blocks.by_ref().take(s.num_layers()).collect(),
                head: if s.holds_lm_head { head.take() } else { None },
            })
            .collect()
    }

    /// Inverse of [`StageModel::split`].
    pub fn join(config: crate::model::ModelConfig, stages: Vec<StageModel>) -> Result<TransformerModel> {
        let mut embedder = None;
        let mut head = None;
        let mut blocks = Vec::with_capacity(config.n_layers);
        for s in stages {
            embedder = embedder.or(s.embedder);
            head = head.or(s.head);
            blocks.extend(s.blocks);
        }
        match (embedder, head) {
            (Some(embedder), Some(head)) if blocks.len() == config.n_layers => Ok(TransformerModel {
                config,
                embedder,
                blocks,
                head,
            }),
            _ => contract_err("stages do not reassemble into a whole model"),
        }
    }
}

impl Module for StageModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.embedder.iter().flat_map(|e| e.params()).collect();
        for b in &self.blocks {
            v.extend(b.params());
        }
        if let Some(h) = &self.head {
            v.extend(h.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.embedder.iter_mut().flat_map(|e| e.params_mut()).collect();
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        if let Some(h) = &mut self.head {
            v.extend(h.params_mut());
        }
        v
    }

    fn param_names(&self) -> Vec<String> {
        let mut v = self.embedder.as_ref().map(|e| e.param_names()).unwrap_or_default();
        for (i, b) in self.blocks.iter().enumerate() {
            let layer = self.spec.lo - 1 + i;
            v.extend(b.param_names().into_iter().map(|n| format!("blocks.{layer}.{n}")));
        }
        if let Some(h) = &self.head {
            v.extend(h.param_names());
        }
        v
    }
}

struct Pending {
    tape: Tape,
    vars: Vec<Var>,
    input: Option<Var>,
    output: Var,
}

/// Input to a stage's forward pass.
pub enum StageInput<'a> {
    Tokens(&'a [usize]),
    Activation(Tensor),
}

/// Output of a stage's forward pass.
pub enum StageOutput {
    Activation(Tensor),
    /// Scaled loss contribution of the microbatch (last stage only).
    Loss(f64),
}

/// One stage's forward/backward logic, shared by both executors.
pub struct StageWorker {
    pub model: StageModel,
    opt: OptimizerState,
    pending: VecDeque<Pending>,
}

impl StageWorker {
    pub fn new(model: StageModel, adam: AdamWConfig) -> Result<Self> {
        Ok(StageWorker {
            model,
            opt: OptimizerState::new(adam)?,
            pending: VecDeque::new(),
        })
    }

    pub fn index(&self) -> usize {
        self.model.spec.index
    }

    /// Runs this stage on one microbatch and keeps its tape for backward.
    /// `targets` and `scale` are used by the last stage only.
    pub fn forward(&mut self, input: StageInput<'_>, targets: &[usize], scale: f64) -> Result<StageOutput> {
        let m = &self.model;
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape, true);
        let n_embed = m.embedder.as_ref().map_or(0, |e| e.params().len());
        let (mut x, input) = match input {
            StageInput::Tokens(ids) => {
                let Some(e) = &m.embedder else {
                    return contract_err(format!("stage {} received token ids", m.spec.index));
                };
                let ev = &vars[..n_embed];
                let x = e.lookup(&mut tape, ev, ids)?;
                (e.add_positions(&mut tape, ev, x)?, None)
            }
            StageInput::Activation(t) => {
                let v = tape.input(t, true);
                (v, Some(v))
            }
        };
        let mut offset = n_embed;
        for b in &m.blocks {
            let n = b.params().len();
            x = b.forward(&mut tape, &vars[offset..offset + n], x)?;
            offset += n;
        }
        let out = match &m.head {
            Some(h) => {
                let logits = h.forward(&mut tape, &vars[offset..], x)?;
                let loss = tape.cross_entropy_scaled(logits, targets, scale)?;
                let value = tape.value(loss)[0];
                self.pending.push_back(Pending {
                    tape,
                    vars,
                    input,
                    output: loss,
                });
                return Ok(StageOutput::Loss(value));
            }
            None => tape.tensor(x),
        };
        self.pending.push_back(Pending {
            tape,
            vars,
            input,
            output: x,
        });
        Ok(StageOutput::Activation(out))
    }

    /// Backward for the oldest pending microbatch. `grad` is the gradient
    /// arriving from the next stage (ignored on the last stage). Returns the
    /// gradient for the previous stage, if there is one.
    pub fn backward(&mut self, grad: Option<&Tensor>) -> Result<Option<Tensor>> {
        let Some(mut p) = self.pending.pop_front() else {
            return contract_err(format!("stage {} has no pending microbatch", self.index()));
        };
        match (&self.model.head, grad) {
            (Some(_), _) => p.tape.backward(p.output)?,
            (None, Some(g)) => p.tape.backward_from(p.output, g.data())?,
            (None, None) => return contract_err(format!("stage {} needs an upstream gradient", self.index())),
        }
        self.model.accumulate_grads(&p.tape, &p.vars)?;
        Ok(p.input.map(|v| {
            let g = p.tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.tape.value(v).len()]);
            Tensor::new(p.tape.shape(v).to_vec(), g).expect("gradient matches its activation")
        }))
    }

    pub fn step(&mut self) -> Result<()> {
        if !self.pending.is_empty() {
            return contract_err(format!("stage {} stepped with pending microbatches", self.index()));
        }
        self.opt.step(&mut self.model.params_mut())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, ModelConfig};
    use crate::pipeline::partition_model;

    #[test]
    fn split_and_join_preserve_parameters() {
        for arch in Architecture::ALL {
            let cfg = ModelConfig {
                n_layers: 5,
                d_model: 8,
                n_heads: 2,
                d_ff: 8,
                vocab_size: 9,
                max_seq_len: 6,
                architecture: arch,
            };
            let m = TransformerModel::init(cfg.clone(), 3).unwrap();
            let specs = partition_model(&cfg, 3).unwrap();
            let stages = StageModel::split(m.clone(), &specs);
            let names: Vec<String> = stages.iter().flat_map(|s| s.param_names()).collect();
            assert_eq!(names, m.param_names());
            let back = StageModel::join(cfg, stages).unwrap();
            assert_eq!(back, m);
        }
    }
}
