use rand::Rng;

use super::config::{Architecture, LN_EPS};
use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub(crate) const INIT_STD: f64 = 0.02;

/// A bundle of parameters with a fixed visiting order. `bind` records them
/// on a tape in that order and `accumulate_grads` reads gradients back.
pub trait Module {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    fn param_names(&self) -> Vec<String>;

    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|t| tape.leaf_as(t, trainable))
            .collect()
    }

    /// Adds tape gradients of `vars` into the parameters (zeros where the
    /// tape produced none).
    fn accumulate_grads(&mut self, tape: &Tape, vars: &[Var]) -> Result<()> {
        for (p, v) in self.params_mut().into_iter().zip(vars) {
            match tape.grad(*v) {
                Some(g) => p.accumulate_grad(g)?,
                None => p.accumulate_grad(&vec![0.0; p.numel()])?,
            }
        }
        Ok(())
    }

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }
}

pub(crate) fn weight<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::randn(shape, INIT_STD, rng).with_requires_grad(true)
}

pub(crate) fn zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape).with_requires_grad(true)
}

pub(crate) fn ones(shape: &[usize]) -> Tensor {
    Tensor::ones(shape).with_requires_grad(true)
}

/// Token embedding (absent for the attack model) and learned positions
/// (absent for rotary architectures).
#[derive(Clone, Debug, PartialEq)]
pub struct Embedder {
    pub token: Option<Tensor>,
    pub positional: Option<Tensor>,
}

impl Embedder {
    pub(crate) fn init<R: Rng + ?Sized>(
        vocab: Option<usize>,
        d_model: usize,
        max_seq_len: usize,
        arch: Architecture,
        rng: &mut R,
    ) -> Self {
        let token = vocab.map(|v| weight(&[v, d_model], rng));
        let positional = arch
            .learned_positions()
            .then(|| weight(&[max_seq_len, d_model], rng));
        Embedder { token, positional }
    }

    fn split(&self, vars: &[Var]) -> (Option<Var>, Option<Var>) {
        let mut it = vars.iter().copied();
        let tok = self.token.as_ref().and_then(|_| it.next());
        let pos = self.positional.as_ref().and_then(|_| it.next());
        (tok, pos)
    }

    /// Token rows only, before positions are added.
    pub fn lookup(&self, tape: &mut Tape, vars: &[Var], ids: &[usize]) -> Result<Var> {
        let (tok, _) = self.split(vars);
        let tok = tok.expect("embedder without a token table cannot look up ids");
        tape.embedding(tok, ids)
    }

    /// Adds learned positions `0..n` to `x[n×d]`; identity for rotary models.
    pub fn add_positions(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let (_, pos) = self.split(vars);
        match pos {
            Some(p) => {
                let n = tape.shape(x)[0];
                let rows = tape.slice_rows(p, 0, n)?;
                tape.add(x, rows)
            }
            None => Ok(x),
        }
    }
}

impl Module for Embedder {
    fn params(&self) -> Vec<&Tensor> {
        self.token.iter().chain(self.positional.iter()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.token.iter_mut().chain(self.positional.iter_mut()).collect()
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.token.is_some() {
            names.push("embed.token".to_string());
        }
        if self.positional.is_some() {
            names.push("embed.positional".to_string());
        }
        names
    }
}

/// Optional final norm (pre-norm architectures) and the vocabulary projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub norm: Option<(Tensor, Tensor)>,
    pub lm_head: Tensor,
}

impl Head {
    pub(crate) fn init<R: Rng + ?Sized>(d_model: usize, vocab: usize, arch: Architecture, rng: &mut R) -> Self {
        let norm = arch.pre_norm().then(|| (ones(&[d_model]), zeros(&[d_model])));
        Head {
            norm,
            lm_head: weight(&[d_model, vocab], rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let h = match self.norm {
            Some(_) => tape.layer_norm(x, vars[0], vars[1], LN_EPS)?,
            None => x,
        };
        let w = *vars.last().expect("lm_head var");
        tape.matmul(h, w)
    }
}

impl Module for Head {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        if let Some((g, b)) = &self.norm {
            v.push(g);
            v.push(b);
        }
        v.push(&self.lm_head);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        if let Some((g, b)) = &mut self.norm {
            v.push(g);
            v.push(b);
        }
        v.push(&mut self.lm_head);
        v
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.norm.is_some() {
            names.push("head.norm.gamma".to_string());
            names.push("head.norm.beta".to_string());
        }
        names.push("head.lm_head".to_string());
        names
    }
}
