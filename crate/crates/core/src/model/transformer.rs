use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::block::Block;
use super::config::ModelConfig;
use super::layers::{Embedder, Head, Module};
use crate::error::{contract_err, index_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Decoder-only language model. Serves as the pre-trained model, the victim
/// being fine-tuned and the attacker's frozen shadow copy.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerModel {
    pub config: ModelConfig,
    pub embedder: Embedder,
    pub blocks: Vec<Block>,
    pub head: Head,
}

/// Tape handles for every parameter of a [`TransformerModel`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub embed: Vec<Var>,
    pub blocks: Vec<Vec<Var>>,
    pub head: Vec<Var>,
}

impl TransformerModel {
    /// Normal(0, 0.02) weights, zero biases and norm offsets, unit norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let embedder = Embedder::init(Some(c.vocab_size), c.d_model, c.max_seq_len, c.architecture, &mut rng);
        let blocks = (0..c.n_layers)
            .map(|_| Block::init(c.d_model, c.n_heads, c.d_ff, c.architecture, &mut rng))
            .collect();
        let head = Head::init(c.d_model, c.vocab_size, c.architecture, &mut rng);
        Ok(TransformerModel {
            config,
            embedder,
            blocks,
            head,
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        ModelVars {
            embed: self.embedder.bind(tape, trainable),
            blocks: self.blocks.iter().map(|b| b.bind(tape, trainable)).collect(),
            head: self.head.bind(tape, trainable),
        }
    }

    pub fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return contract_err("empty token sequence");
        }
        if tokens.len() > self.config.max_seq_len {
            return contract_err(format!(
                "sequence of {} tokens exceeds max_seq_len {}",
                tokens.len(),
                self.config.max_seq_len
            ));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return index_err(format!("token id {bad} outside vocabulary of {}", self.config.vocab_size));
        }
        Ok(())
    }

    /// Layer-0 activation: token embedding plus positions.
    pub fn embed_ids(&self, tape: &mut Tape, vars: &ModelVars, ids: &[usize]) -> Result<Var> {
        self.check_tokens(ids)?;
        let x = self.embedder.lookup(tape, &vars.embed, ids)?;
        self.embedder.add_positions(tape, &vars.embed, x)
    }

    /// Adds positions to caller-provided input embeddings (soft prompts).
    pub fn embed_inputs(&self, tape: &mut Tape, vars: &ModelVars, x: Var) -> Result<Var> {
        let n = tape.shape(x)[0];
        if n > self.config.max_seq_len {
            return contract_err(format!("{n} input rows exceed max_seq_len {}", self.config.max_seq_len));
        }
        self.embedder.add_positions(tape, &vars.embed, x)
    }

    /// Runs blocks `range` (0-based) and returns each block's output.
    pub fn run_blocks(&self, tape: &mut Tape, vars: &ModelVars, mut x: Var, range: Range<usize>) -> Result<Vec<Var>> {
        let mut outs = Vec::with_capacity(range.len());
        for i in range {
            x = self.blocks[i].forward(tape, &vars.blocks[i], x)?;
            outs.push(x);
        }
        Ok(outs)
    }

    pub fn logits(&self, tape: &mut Tape, vars: &ModelVars, x: Var) -> Result<Var> {
        self.head.forward(tape, &vars.head, x)
    }

    /// Logits and the output of every block.
    pub fn forward_full(&self, tokens: &[usize]) -> Result<(Tensor, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = self.embed_ids(&mut tape, &vars, tokens)?;
        let outs = self.run_blocks(&mut tape, &vars, x, 0..self.config.n_layers)?;
        let logits = self.logits(&mut tape, &vars, *outs.last().expect("n_layers >= 1"))?;
        Ok((tape.tensor(logits), outs.iter().map(|v| tape.tensor(*v)).collect()))
    }

    /// Activation after block `j` (1-based); `j = 0` is the embedding output.
    pub fn forward_prefix(&self, tokens: &[usize], j: usize) -> Result<Tensor> {
        if j > self.config.n_layers {
            return index_err(format!("layer index {j} outside 0..={}", self.config.n_layers));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = self.embed_ids(&mut tape, &vars, tokens)?;
        let outs = self.run_blocks(&mut tape, &vars, x, 0..j)?;
        Ok(tape.tensor(outs.last().copied().unwrap_or(x)))
    }

    /// Continues from an activation after block `j` through the remaining
    /// blocks and the head.
    pub fn forward_suffix(&self, activation: &Tensor, j: usize) -> Result<Tensor> {
        if j > self.config.n_layers {
            return index_err(format!("layer index {j} outside 0..={}", self.config.n_layers));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.leaf_as(activation, false);
        let outs = self.run_blocks(&mut tape, &vars, x, j..self.config.n_layers)?;
        let logits = self.logits(&mut tape, &vars, outs.last().copied().unwrap_or(x))?;
        Ok(tape.tensor(logits))
    }

    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &ModelVars) -> Result<()> {
        self.embedder.accumulate_grads(tape, &vars.embed)?;
        for (b, v) in self.blocks.iter_mut().zip(&vars.blocks) {
            b.accumulate_grads(tape, v)?;
        }
        self.head.accumulate_grads(tape, &vars.head)
    }

    /// SHA-256 over the AIAT encoding of every parameter, in order.
    pub fn param_hash(&self) -> String {
        params_hash(&self.params())
    }
}

pub(crate) fn params_hash(params: &[&Tensor]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_aiat_bytes());
    }
    hex::encode(h.finalize())
}

impl Module for TransformerModel {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::softmax_rows;
    use crate::model::Architecture;

    fn cfg(arch: Architecture) -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab_size: 10,
            max_seq_len: 12,
            architecture: arch,
        }
    }

    /// Closed-form parameter count, independent of the enumeration above.
    fn closed_form(c: &ModelConfig) -> usize {
        let (d, f, v, l) = (c.d_model, c.d_ff, c.vocab_size, c.max_seq_len);
        let attn = 4 * d * d + 4 * d;
        let norms = 4 * d;
        let mlp = match c.architecture {
            Architecture::C => 3 * d * f + 2 * f + d,
            _ => 2 * d * f + f + d,
        };
        let positions = if c.architecture == Architecture::C { 0 } else { l * d };
        let final_norm = if c.architecture == Architecture::A { 0 } else { 2 * d };
        v * d + positions + c.n_layers * (attn + norms + mlp) + final_norm + d * v
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        for arch in Architecture::ALL {
            let c = cfg(arch);
            let m = TransformerModel::init(c.clone(), 0).unwrap();
            assert_eq!(m.num_params(), closed_form(&c), "{arch}");
            assert_eq!(m.param_names().len(), m.params().len());
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = TransformerModel::init(cfg(Architecture::B), 3).unwrap();
        let b = TransformerModel::init(cfg(Architecture::B), 3).unwrap();
        assert_eq!(a.param_hash(), b.param_hash());
        let c = TransformerModel::init(cfg(Architecture::B), 4).unwrap();
        assert_ne!(a.param_hash(), c.param_hash());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = cfg(Architecture::A);
        c.d_model = 7;
        assert!(TransformerModel::init(c, 0).is_err());
    }

    #[test]
    fn prefix_composes_with_suffix_bitwise() {
        for arch in Architecture::ALL {
            let m = TransformerModel::init(cfg(arch), 1).unwrap();
            let tokens = [1, 4, 5, 9, 2];
            let (logits, acts) = m.forward_full(&tokens).unwrap();
            assert_eq!(acts.len(), 2);
            for j in 0..=2 {
                let prefix = m.forward_prefix(&tokens, j).unwrap();
                if j > 0 {
                    assert!(prefix.bitwise_eq(&acts[j - 1]));
                }
                assert!(m.forward_suffix(&prefix, j).unwrap().bitwise_eq(&logits));
            }
            assert!(m.forward_prefix(&tokens, 3).is_err());
        }
    }

    #[test]
    fn earlier_positions_ignore_later_tokens() {
        for arch in Architecture::ALL {
            let m = TransformerModel::init(cfg(arch), 2).unwrap();
            let (a, _) = m.forward_full(&[1, 4, 5]).unwrap();
            let (b, _) = m.forward_full(&[1, 4, 5, 7]).unwrap();
            let (c, _) = m.forward_full(&[1, 4, 6, 7]).unwrap();
            assert_eq!(a.data(), &b.data()[..30]);
            assert_eq!(&b.data()[..20], &c.data()[..20]);
        }
    }

    #[test]
    fn logits_softmax_to_distributions() {
        let m = TransformerModel::init(cfg(Architecture::C), 5).unwrap();
        let (logits, _) = m.forward_full(&[1, 2, 3, 4]).unwrap();
        for row in softmax_rows(logits.data(), 10).chunks(10) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn architectures_differ_on_the_same_input() {
        let tokens = [1, 5, 6, 7];
        let outs: Vec<Tensor> = Architecture::ALL
            .iter()
            .map(|&a| TransformerModel::init(cfg(a), 9).unwrap().forward_full(&tokens).unwrap().0)
            .collect();
        assert!(!outs[0].bitwise_eq(&outs[1]));
        assert!(!outs[1].bitwise_eq(&outs[2]));
        assert!(!outs[0].bitwise_eq(&outs[2]));
    }

    #[test]
    fn overlong_sequences_are_rejected() {
        let m = TransformerModel::init(cfg(Architecture::A), 0).unwrap();
        assert!(m.forward_full(&[1; 13]).is_err());
        assert!(m.forward_full(&[11]).is_err());
    }
}
