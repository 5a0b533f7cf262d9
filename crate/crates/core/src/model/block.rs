use rand::Rng;

use super::config::{Architecture, LN_EPS, ROPE_BASE};
use super::layers::{ones, weight, zeros, Module};
use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// One decoder block: causal self-attention and an MLP, each with a
/// residual connection and a layer norm placed according to the
/// architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub architecture: Architecture,
    pub n_heads: usize,
    ln1: (Tensor, Tensor),
    wq: (Tensor, Tensor),
    wk: (Tensor, Tensor),
    wv: (Tensor, Tensor),
    wo: (Tensor, Tensor),
    ln2: (Tensor, Tensor),
    fc: (Tensor, Tensor),
    proj: (Tensor, Tensor),
    gate: Option<(Tensor, Tensor)>,
}

const NAMES: [&str; 16] = [
    "ln1.gamma", "ln1.beta", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
    "attn.wo", "attn.bo", "ln2.gamma", "ln2.beta", "mlp.fc.w", "mlp.fc.b", "mlp.proj.w",
    "mlp.proj.b",
];

impl Block {
    pub(crate) fn init<R: Rng + ?Sized>(
        d_model: usize,
        n_heads: usize,
        d_ff: usize,
        architecture: Architecture,
        rng: &mut R,
    ) -> Self {
        let d = d_model;
        let mut linear = |i: usize, o: usize| (weight(&[i, o], rng), zeros(&[o]));
        let wq = linear(d, d);
        let wk = linear(d, d);
        let wv = linear(d, d);
        let wo = linear(d, d);
        let fc = linear(d, d_ff);
        let proj = linear(d_ff, d);
        let gate = architecture.gated_mlp().then(|| linear(d, d_ff));
        Block {
            architecture,
            n_heads,
            ln1: (ones(&[d]), zeros(&[d])),
            wq,
            wk,
            wv,
            wo,
            ln2: (ones(&[d]), zeros(&[d])),
            fc,
            proj,
            gate,
        }
    }

    fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    fn attention(&self, tape: &mut Tape, p: &[Var], h: Var) -> Result<Var> {
        let mut q = Self::linear(tape, h, p[2], p[3])?;
        let mut k = Self::linear(tape, h, p[4], p[5])?;
        let v = Self::linear(tape, h, p[6], p[7])?;
        if !self.architecture.learned_positions() {
            q = tape.rope(q, self.n_heads, ROPE_BASE)?;
            k = tape.rope(k, self.n_heads, ROPE_BASE)?;
        }
        let o = tape.causal_attention(q, k, v, self.n_heads)?;
        Self::linear(tape, o, p[8], p[9])
    }

    fn mlp(&self, tape: &mut Tape, p: &[Var], h: Var) -> Result<Var> {
        let up = Self::linear(tape, h, p[12], p[13])?;
        let act = if self.gate.is_some() {
            let g = Self::linear(tape, h, p[16], p[17])?;
            let g = tape.silu(g);
            tape.mul(g, up)?
        } else {
            tape.gelu(up)
        };
        Self::linear(tape, act, p[14], p[15])
    }

    /// Applies the block to `x[n×d]` using parameter vars from [`Module::bind`].
    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        if self.architecture.pre_norm() {
            let h = tape.layer_norm(x, p[0], p[1], LN_EPS)?;
            let a = self.attention(tape, p, h)?;
            let x = tape.add(x, a)?;
            let h = tape.layer_norm(x, p[10], p[11], LN_EPS)?;
            let m = self.mlp(tape, p, h)?;
            tape.add(x, m)
        } else {
            let a = self.attention(tape, p, x)?;
            let s = tape.add(x, a)?;
            let x = tape.layer_norm(s, p[0], p[1], LN_EPS)?;
            let m = self.mlp(tape, p, x)?;
            let s = tape.add(x, m)?;
            tape.layer_norm(s, p[10], p[11], LN_EPS)
        }
    }
}

impl Module for Block {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = Vec::with_capacity(18);
        for (w, b) in [&self.ln1, &self.wq, &self.wk, &self.wv, &self.wo, &self.ln2, &self.fc, &self.proj] {
            v.push(w);
            v.push(b);
        }
        if let Some((w, b)) = &self.gate {
            v.push(w);
            v.push(b);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::with_capacity(18);
        for (w, b) in [
            &mut self.ln1,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.ln2,
            &mut self.fc,
            &mut self.proj,
        ] {
            v.push(w);
            v.push(b);
        }
        if let Some((w, b)) = &mut self.gate {
            v.push(w);
            v.push(b);
        }
        v
    }

    fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = NAMES.iter().map(|s| s.to_string()).collect();
        if self.gate.is_some() {
            names.push("mlp.gate.w".into());
            names.push("mlp.gate.b".into());
        }
        names
    }
}
