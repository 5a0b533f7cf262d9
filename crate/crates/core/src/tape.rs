//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends one node holding its output value and whatever it needs
//! for the backward rule. Nodes only reference earlier nodes, so one reverse
//! sweep visits each node once in a valid order. A tape lives for a single
//! forward/backward pass; call [`Tape::clear`] (or drop it) afterwards.

use crate::error::{contract_err, index_err, shape_err, Result};
use crate::kernels::{dot, log_sum_exp, matmul_acc, matmul_at_acc, matmul_bt_acc, softmax_in_place};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add { a: Var, b: Var },
    AddRow { x: Var, bias: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, s: f64 },
    Gelu { x: Var },
    Silu { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<f64> },
    Rope { x: Var, heads: usize, base: f64 },
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64>, scale: f64 },
    Sum { x: Var },
    SliceRows { x: Var, start: usize },
    ConcatRows { a: Var, b: Var },
    Transpose { x: Var },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn cols_of(shape: &[usize]) -> usize {
    *shape.last().expect("non-empty shape")
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Records a copy of `t`; gradients flow to it iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), t.requires_grad(), Op::Leaf)
    }

    /// Records a copy of `t`'s values with an explicit gradient flag.
    pub fn leaf_as(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), requires_grad, Op::Leaf)
    }

    /// Records an owned value as a leaf.
    pub fn input(&mut self, t: Tensor, requires_grad: bool) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), requires_grad, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape values are well-formed")
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.node(v).grad.as_deref()
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let s = &self.node(v).shape;
        let c = cols_of(s);
        (s.iter().product::<usize>() / c, c)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err(format!("matmul of {sa:?} by {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, rg, Op::MatMul { a, b, m, k, n }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("add of {:?} and {:?}", self.shape(a), self.shape(b)));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, rg, Op::Add { a, b }))
    }

    /// Adds a `[d]` row vector to every row of `x[…×d]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, c) = self.dims2(x);
        if self.node(bias).value.len() != c {
            return shape_err(format!("bias {:?} for rows of {:?}", self.shape(bias), self.shape(x)));
        }
        let bv = self.value(bias);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(c) {
            row.iter_mut().zip(bv).for_each(|(o, b)| *o += b);
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(self.shape(x).to_vec(), out, rg, Op::AddRow { x, bias }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("mul of {:?} and {:?}", self.shape(a), self.shape(b)));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * s).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, rg, Op::Scale { x, s })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| gelu(v)).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, rg, Op::Gelu { x })
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v * sigmoid(v)).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, rg, Op::Silu { x })
    }

    /// Row-wise layer norm with population variance and `eps` inside the root.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims2(x);
        if self.node(gamma).value.len() != c || self.node(beta).value.len() != c {
            return shape_err(format!(
                "layer_norm over width {c} with gamma {:?} and beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        if !(eps >= 0.0) {
            return contract_err(format!("layer_norm eps must be non-negative, got {eps}"));
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            rg,
            Op::LayerNorm { x, gamma, beta, xhat, rstd },
        ))
    }

    /// Causal multi-head scaled dot-product attention over `[n×d]` inputs.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let shape = self.shape(q).to_vec();
        if shape.len() != 2 || self.shape(k) != shape.as_slice() || self.shape(v) != shape.as_slice() {
            return shape_err(format!(
                "attention over q {:?}, k {:?}, v {:?}",
                shape,
                self.shape(k),
                self.shape(v)
            ));
        }
        let (n, d) = (shape[0], shape[1]);
        if heads == 0 || d % heads != 0 {
            return shape_err(format!("{heads} heads do not divide width {d}"));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![0.0; heads * n * n];
        let mut out = vec![0.0; n * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let qi = &qv[i * d + off..i * d + off + dh];
                let row = &mut probs[(h * n + i) * n..(h * n + i) * n + i + 1];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = dot(qi, &kv[j * d + off..j * d + off + dh]) * scale;
                }
                softmax_in_place(row);
                let oi = &mut out[i * d + off..i * d + off + dh];
                for (j, &p) in row.iter().enumerate() {
                    let vj = &vv[j * d + off..j * d + off + dh];
                    oi.iter_mut().zip(vj).for_each(|(o, x)| *o += p * x);
                }
            }
        }
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(shape, out, rg, Op::Attention { q, k, v, heads, probs }))
    }

    /// Rotary position embedding applied per head to `[n×d]`, position = row.
    pub fn rope(&mut self, x: Var, heads: usize, base: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || heads == 0 || shape[1] % heads != 0 || (shape[1] / heads) % 2 != 0 {
            return shape_err(format!("rope over {shape:?} with {heads} heads needs even head width"));
        }
        let out = rope_apply(self.value(x), shape[0], shape[1], heads, base, false);
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, rg, Op::Rope { x, heads, base }))
    }

    /// Gathers rows of `table[V×d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return shape_err(format!("embedding table must be 2-D, got {shape:?}"));
        }
        if ids.is_empty() {
            return contract_err("embedding lookup of an empty id list");
        }
        let (v, d) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return index_err(format!("token id {bad} outside vocabulary of {v}"));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            vec![ids.len(), d],
            out,
            rg,
            Op::Embedding { table, ids: ids.to_vec() },
        ))
    }

    /// Mean next-token cross-entropy, `-(1/n) Σ log softmax(logits)[k][targets[k]]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let scale = 1.0 / targets.len().max(1) as f64;
        self.cross_entropy_scaled(logits, targets, scale)
    }

    /// `scale · Σ_k −log softmax(logits)[k][targets[k]]`.
    pub fn cross_entropy_scaled(&mut self, logits: Var, targets: &[usize], scale: f64) -> Result<Var> {
        let (r, c) = self.dims2(logits);
        if targets.len() != r {
            return shape_err(format!("{} targets for {r} logit rows", targets.len()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return index_err(format!("target id {bad} outside vocabulary of {c}"));
        }
        let lv = self.value(logits);
        let mut probs = lv.to_vec();
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = &lv[i * c..(i + 1) * c];
            total += log_sum_exp(row) - row[t];
            softmax_in_place(&mut probs[i * c..(i + 1) * c]);
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            vec![1],
            vec![total * scale],
            rg,
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs, scale },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(vec![1], vec![s], rg, Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(x);
        if len == 0 || start + len > r {
            return shape_err(format!("rows {start}..{} of a {r}-row tensor", start + len));
        }
        let out = self.value(x)[start * c..(start + len) * c].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(vec![len, c], out, rg, Op::SliceRows { x, start }))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((ra, ca), (rb, cb)) = (self.dims2(a), self.dims2(b));
        if ca != cb {
            return shape_err(format!("concat of {:?} and {:?}", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).to_vec();
        out.extend_from_slice(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![ra + rb, ca], out, rg, Op::ConcatRows { a, b }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return shape_err(format!("transpose of {shape:?}"));
        }
        let out = transpose(self.value(x), shape[0], shape[1]);
        let rg = self.rg(&[x]);
        Ok(self.push(vec![shape[1], shape[0]], out, rg, Op::Transpose { x }))
    }

    /// Backpropagates from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).value.len() != 1 {
            return contract_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        self.backward_from(loss, &[1.0])
    }

    /// Backpropagates an upstream gradient `seed` arriving at `out`.
    pub fn backward_from(&mut self, out: Var, seed: &[f64]) -> Result<()> {
        if seed.len() != self.node(out).value.len() {
            return shape_err(format!(
                "seed of length {} for output {:?}",
                seed.len(),
                self.shape(out)
            ));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[out.0].grad = Some(seed.to_vec());
        for idx in (0..=out.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let contribs = self.input_grads(idx, &g);
            self.nodes[idx].grad = Some(g);
            for (v, delta) in contribs {
                let node = &mut self.nodes[v.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    None => node.grad = Some(delta),
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let needs = |v: &Var| self.node(*v).requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul { a, b, m, k, n } => {
                let mut out = Vec::new();
                if needs(a) {
                    let mut ga = vec![0.0; m * k];
                    matmul_bt_acc(g, self.value(*b), &mut ga, *m, *k, *n);
                    out.push((*a, ga));
                }
                if needs(b) {
                    let mut gb = vec![0.0; k * n];
                    matmul_at_acc(self.value(*a), g, &mut gb, *m, *k, *n);
                    out.push((*b, gb));
                }
                out
            }
            Op::Add { a, b } => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::AddRow { x, bias } => {
                let c = self.node(*bias).value.len();
                let mut gb = vec![0.0; c];
                for row in g.chunks_exact(c) {
                    gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                }
                vec![(*x, g.to_vec()), (*bias, gb)]
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                vec![
                    (*a, g.iter().zip(bv).map(|(g, b)| g * b).collect()),
                    (*b, g.iter().zip(av).map(|(g, a)| g * a).collect()),
                ]
            }
            Op::Scale { x, s } => vec![(*x, g.iter().map(|v| v * s).collect())],
            Op::Gelu { x } => vec![(
                *x,
                g.iter().zip(self.value(*x)).map(|(g, &x)| g * gelu_grad(x)).collect(),
            )],
            Op::Silu { x } => vec![(
                *x,
                g.iter()
                    .zip(self.value(*x))
                    .map(|(g, &x)| {
                        let s = sigmoid(x);
                        g * s * (1.0 + x * (1.0 - s))
                    })
                    .collect(),
            )],
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let c = self.node(*gamma).value.len();
                let gam = self.value(*gamma);
                let mut gx = vec![0.0; g.len()];
                let mut gg = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                let mut dxhat = vec![0.0; c];
                for (i, rs) in rstd.iter().enumerate() {
                    let gr = &g[i * c..(i + 1) * c];
                    let hr = &xhat[i * c..(i + 1) * c];
                    let mut mean_d = 0.0;
                    let mut mean_dh = 0.0;
                    for j in 0..c {
                        dxhat[j] = gr[j] * gam[j];
                        mean_d += dxhat[j];
                        mean_dh += dxhat[j] * hr[j];
                        gg[j] += gr[j] * hr[j];
                        gbeta[j] += gr[j];
                    }
                    mean_d /= c as f64;
                    mean_dh /= c as f64;
                    for j in 0..c {
                        gx[i * c + j] = rs * (dxhat[j] - mean_d - hr[j] * mean_dh);
                    }
                }
                vec![(*x, gx), (*gamma, gg), (*beta, gbeta)]
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (n, d) = (node.shape[0], node.shape[1]);
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut gq = vec![0.0; n * d];
                let mut gk = vec![0.0; n * d];
                let mut gv = vec![0.0; n * d];
                let mut ds = vec![0.0; n];
                for h in 0..*heads {
                    let off = h * dh;
                    for i in 0..n {
                        let p = &probs[(h * n + i) * n..(h * n + i) * n + i + 1];
                        let go = &g[i * d + off..i * d + off + dh];
                        let mut weighted = 0.0;
                        for (j, &pj) in p.iter().enumerate() {
                            let dp = dot(go, &vv[j * d + off..j * d + off + dh]);
                            ds[j] = dp;
                            weighted += pj * dp;
                            let gvj = &mut gv[j * d + off..j * d + off + dh];
                            gvj.iter_mut().zip(go).for_each(|(a, b)| *a += pj * b);
                        }
                        let qi = &qv[i * d + off..i * d + off + dh];
                        for (j, &pj) in p.iter().enumerate() {
                            let s = pj * (ds[j] - weighted) * scale;
                            if s == 0.0 {
                                continue;
                            }
                            let kj = &kv[j * d + off..j * d + off + dh];
                            let gqi = &mut gq[i * d + off..i * d + off + dh];
                            gqi.iter_mut().zip(kj).for_each(|(a, b)| *a += s * b);
                            let gkj = &mut gk[j * d + off..j * d + off + dh];
                            gkj.iter_mut().zip(qi).for_each(|(a, b)| *a += s * b);
                        }
                    }
                }
                vec![(*q, gq), (*k, gk), (*v, gv)]
            }
            Op::Rope { x, heads, base } => {
                let (n, d) = (node.shape[0], node.shape[1]);
                vec![(*x, rope_apply(g, n, d, *heads, *base, true))]
            }
            Op::Embedding { table, ids } => {
                let d = node.shape[1];
                let mut gt = vec![0.0; self.node(*table).value.len()];
                for (i, &id) in ids.iter().enumerate() {
                    let dst = &mut gt[id * d..(id + 1) * d];
                    dst.iter_mut().zip(&g[i * d..(i + 1) * d]).for_each(|(a, b)| *a += b);
                }
                vec![(*table, gt)]
            }
            Op::CrossEntropy { logits, targets, probs, scale } => {
                let c = cols_of(self.shape(*logits));
                let s = g[0] * scale;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * s).collect();
                for (i, &t) in targets.iter().enumerate() {
                    gl[i * c + t] -= s;
                }
                vec![(*logits, gl)]
            }
            Op::Sum { x } => vec![(*x, vec![g[0]; self.node(*x).value.len()])],
            Op::SliceRows { x, start } => {
                let c = cols_of(&node.shape);
                let mut gx = vec![0.0; self.node(*x).value.len()];
                gx[start * c..start * c + g.len()].copy_from_slice(g);
                vec![(*x, gx)]
            }
            Op::ConcatRows { a, b } => {
                let la = self.node(*a).value.len();
                vec![(*a, g[..la].to_vec()), (*b, g[la..].to_vec())]
            }
            Op::Transpose { x } => {
                let (r, c) = (node.shape[0], node.shape[1]);
                vec![(*x, transpose(g, r, c))]
            }
        }
    }
}

fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = a[i * c + j];
        }
    }
    t
}

/// Rotates each head's consecutive pairs by `pos · base^(−2i/dh)`; `inverse`
/// rotates the other way (used for the backward rule).
fn rope_apply(x: &[f64], n: usize, d: usize, heads: usize, base: f64, inverse: bool) -> Vec<f64> {
    let dh = d / heads;
    let mut out = x.to_vec();
    for pos in 0..n {
        for h in 0..heads {
            for i in 0..dh / 2 {
                let theta = pos as f64 * base.powf(-2.0 * i as f64 / dh as f64);
                let (sin, cos) = theta.sin_cos();
                let sin = if inverse { -sin } else { sin };
                let a = pos * d + h * dh + 2 * i;
                let (x0, x1) = (x[a], x[a + 1]);
                out[a] = x0 * cos - x1 * sin;
                out[a + 1] = x0 * sin + x1 * cos;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let i2 = tape.leaf(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let a = tape.leaf(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(&t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let id = tape.matmul(i2, a).unwrap();
        assert_eq!(tape.value(id), &[1.0, 2.0, 3.0, 4.0]);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::zeros(&[2, 3]));
        let b = tape.leaf(&Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Shape(_)));
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn layer_norm_hand_cases() {
        let mut tape = Tape::new();
        let ones = tape.leaf(&Tensor::ones(&[3]));
        let zeros = tape.leaf(&Tensor::zeros(&[3]));
        let x = tape.leaf(&t(&[1, 3], &[1.0, 1.0, 1.0]));
        let y = tape.layer_norm(x, ones, zeros, 1e-5).unwrap();
        assert!(tape.value(y).iter().all(|v| v.abs() < 1e-12));

        let x = tape.leaf(&t(&[1, 3], &[1.0, 2.0, 3.0]));
        let y = tape.layer_norm(x, ones, zeros, 0.0).unwrap();
        let r = 1.5f64.sqrt();
        for (got, want) in tape.value(y).iter().zip([-r, 0.0, r]) {
            assert!((got - want).abs() < 1e-12);
        }

        let gamma0 = tape.leaf(&Tensor::zeros(&[3]));
        let beta5 = tape.leaf(&Tensor::full(&[3], 5.0));
        let y = tape.layer_norm(x, gamma0, beta5, 1e-5).unwrap();
        assert_eq!(tape.value(y), &[5.0, 5.0, 5.0]);

        let wrong = tape.leaf(&Tensor::ones(&[4]));
        assert!(matches!(tape.layer_norm(x, wrong, zeros, 1e-5), Err(Error::Shape(_))));
    }

    #[test]
    fn cross_entropy_hand_cases() {
        let mut tape = Tape::new();
        let uniform = tape.leaf(&Tensor::full(&[1, 4], 0.3));
        let l = tape.softmax_cross_entropy(uniform, &[2]).unwrap();
        assert!((tape.value(l)[0] - 4f64.ln()).abs() < 1e-12);

        let confident = tape.leaf(&t(&[1, 3], &[0.0, 30.0, 0.0]));
        let l = tape.softmax_cross_entropy(confident, &[1]).unwrap();
        assert!(tape.value(l)[0] < 1e-12);

        let two = tape.leaf(&t(&[1, 2], &[2.0, 0.0]));
        let l = tape.softmax_cross_entropy(two, &[1]).unwrap();
        let want = (1.0 + 2f64.exp()).ln();
        assert!((tape.value(l)[0] - want).abs() < 1e-12);
        assert!((want - 2.1269).abs() < 1e-4);

        assert!(matches!(tape.softmax_cross_entropy(two, &[2]), Err(Error::Index(_))));
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut tape = Tape::new();
        let logits = tape.leaf(&t(&[2, 3], &[0.1, 0.2, 0.3, 1.0, -1.0, 0.5]).with_requires_grad(true));
        let l = tape.softmax_cross_entropy(logits, &[2, 0]).unwrap();
        tape.backward(l).unwrap();
        let probs = crate::kernels::softmax_rows(tape.value(logits), 3);
        let mut want: Vec<f64> = probs.iter().map(|p| p / 2.0).collect();
        want[2] -= 0.5;
        want[3] -= 0.5;
        for (g, w) in tape.grad(logits).unwrap().iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_simple_cases() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], &[1.0, -2.0, 4.0]).with_requires_grad(true));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1.0, 2.0]).with_requires_grad(true));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::ones(&[2, 2]).with_requires_grad(true));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn attention_rows_are_convex_combinations_of_values() {
        let mut tape = Tape::new();
        let q = tape.leaf(&t(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]));
        let v = tape.leaf(&t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let out = tape.causal_attention(q, q, v, 1).unwrap();
        // first position can only see itself
        assert_eq!(&tape.value(out)[..2], &[1.0, 2.0]);
    }

    #[test]
    fn rope_preserves_norms_and_leaves_position_zero() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..16).map(|i| i as f64 * 0.3 - 2.0).collect();
        let x = tape.leaf(&t(&[2, 8], &data));
        let y = tape.rope(x, 2, 10000.0).unwrap();
        assert_eq!(&tape.value(y)[..8], &data[..8]);
        let n0: f64 = data[8..].iter().map(|v| v * v).sum();
        let n1: f64 = tape.value(y)[8..].iter().map(|v| v * v).sum();
        assert!((n0 - n1).abs() < 1e-12);
    }

    #[test]
    fn embedding_rejects_out_of_range_ids() {
        let mut tape = Tape::new();
        let table = tape.leaf(&Tensor::zeros(&[4, 2]));
        assert!(matches!(tape.embedding(table, &[1, 4]), Err(Error::Index(_))));
    }
}
