use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::block::Block;
use super::config::AttackModelConfig;
use super::layers::{Embedder, Head, Module};
use super::transformer::params_hash;
use crate::data::EOS;
use crate::error::{contract_err, shape_err, Result};
use crate::kernels::argmax;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Decoder stack without a token embedding: consumes an activation sequence
/// `[n×d_model]` and emits token logits `[n×V]` at every position.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackModel {
    pub config: AttackModelConfig,
    pub embedder: Embedder,
    pub blocks: Vec<Block>,
    pub head: Head,
}

#[derive(Clone, Debug)]
pub struct AttackVars {
    pub embed: Vec<Var>,
    pub blocks: Vec<Vec<Var>>,
    pub head: Vec<Var>,
}

impl AttackModel {
    pub fn init(config: AttackModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let embedder = Embedder::init(None, c.d_model, c.max_seq_len, c.architecture, &mut rng);
        let blocks = (0..c.n_layers)
            .map(|_| Block::init(c.d_model, c.n_heads, c.d_ff, c.architecture, &mut rng))
            .collect();
        let head = Head::init(c.d_model, c.vocab_size, c.architecture, &mut rng);
        Ok(AttackModel {
            config,
            embedder,
            blocks,
            head,
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> AttackVars {
        AttackVars {
            embed: self.embedder.bind(tape, trainable),
            blocks: self.blocks.iter().map(|b| b.bind(tape, trainable)).collect(),
            head: self.head.bind(tape, trainable),
        }
    }

    pub fn check_activation(&self, activation: &Tensor) -> Result<()> {
        let shape = activation.shape();
        if shape.len() != 2 || shape[1] != self.config.d_model {
            return shape_err(format!(
                "attack model of width {} given activation {shape:?}",
                self.config.d_model
            ));
        }
        if shape[0] > self.config.max_seq_len {
            return contract_err(format!(
                "activation of {} rows exceeds max_seq_len {}",
                shape[0], self.config.max_seq_len
            ));
        }
        Ok(())
    }

    /// Records the attack forward pass for activation var `x` and returns logits.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &AttackVars, x: Var) -> Result<Var> {
        let mut h = self.embedder.add_positions(tape, &vars.embed, x)?;
        for (b, v) in self.blocks.iter().zip(&vars.blocks) {
            h = b.forward(tape, v, h)?;
        }
        self.head.forward(tape, &vars.head, h)
    }

    /// Logits `[n×V]` for an activation sequence `[n×d_model]`.
    pub fn forward_attack(&self, activation: &Tensor) -> Result<Tensor> {
        self.check_activation(activation)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.leaf_as(activation, false);
        let logits = self.forward_tape(&mut tape, &vars, x)?;
        Ok(tape.tensor(logits))
    }

    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &AttackVars) -> Result<()> {
        self.embedder.accumulate_grads(tape, &vars.embed)?;
        for (b, v) in self.blocks.iter_mut().zip(&vars.blocks) {
            b.accumulate_grads(tape, v)?;
        }
        self.head.accumulate_grads(tape, &vars.head)
    }

    pub fn param_hash(&self) -> String {
        params_hash(&self.params())
    }
}

impl Module for AttackModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.embedder.params();
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.embedder.params_mut();
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }

    fn param_names(&self) -> Vec<String> {
        let mut v = self.embedder.param_names();
        for (i, b) in self.blocks.iter().enumerate() {
            v.extend(b.param_names().into_iter().map(|n| format!("blocks.{i}.{n}")));
        }
        v.extend(self.head.param_names());
        v
    }
}

/// Position-wise argmax over `logits[n×V]` for the first `max_len` rows,
/// cut before the first EOS. Ties resolve to the lowest id.
pub fn greedy_tokens(logits: &Tensor, max_len: usize) -> Result<Vec<usize>> {
    if max_len < 1 {
        return contract_err("max_len must be at least 1");
    }
    let mut out = Vec::new();
    for i in 0..logits.rows().min(max_len) {
        let t = argmax(logits.row(i));
        if t == EOS {
            break;
        }
        out.push(t);
    }
    Ok(out)
}

/// Greedy reconstruction of token ids from an activation sequence.
pub fn decode_greedy(model: &AttackModel, activation: &Tensor, max_len: usize) -> Result<Vec<usize>> {
    if max_len < 1 {
        return contract_err("max_len must be at least 1");
    }
    model.check_activation(activation)?;
    let rows = activation.rows().min(max_len);
    let logits = if rows < activation.rows() {
        let d = activation.cols();
        let head = Tensor::new(vec![rows, d], activation.data()[..rows * d].to_vec())?;
        model.forward_attack(&head)?
    } else {
        model.forward_attack(activation)?
    };
    greedy_tokens(&logits, max_len)
}
