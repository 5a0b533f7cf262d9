//! Finite-difference checks of reverse-mode gradients.
//!
//! Differences are central with step `STEP`, plus one Richardson step at
//! `STEP / 2` to cancel the h^2 truncation term.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{
    lm_batch_loss, Architecture, AttackModel, AttackModelConfig, LmBatch, ModelConfig, Module, TransformerModel,
};
use crate::{Tape, Tensor, Var};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-5;

/// An analytic gradient entry that disagrees with its numeric estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub location: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: analytic {} numeric {}", self.location, self.analytic, self.numeric)
    }
}

impl std::error::Error for Mismatch {}

/// Relative agreement, floored at 1e-3 so near-zero entries compare
/// absolutely.
pub fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= TOLERANCE * analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Derivative at 0 of `f`, which takes the perturbation.
pub fn central(f: impl Fn(f64) -> f64) -> f64 {
    let d = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    (4.0 * d(STEP / 2.0) - d(STEP)) / 3.0
}

fn compare(location: impl FnOnce() -> String, analytic: f64, numeric: f64) -> Result<(), Mismatch> {
    if close(analytic, numeric) {
        Ok(())
    } else {
        Err(Mismatch {
            location: location(),
            analytic,
            numeric,
        })
    }
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Checks every input element of `f`, reduced to a scalar with fixed random
/// weights so that each output element carries a distinct gradient.
/// Returns the number of entries compared.
pub fn check_op(name: &str, inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) -> Result<usize, Mismatch> {
    let scalar = |inputs: &[Tensor], tape: &mut Tape| -> (Var, Vec<Var>) {
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf_as(t, true)).collect();
        let out = f(tape, &vars);
        let shape = tape.shape(out).to_vec();
        let w = tape.leaf_as(&randn(&shape, 99), false);
        let prod = tape.mul(out, w).expect("same shape");
        (tape.sum(prod), vars)
    };
    let mut tape = Tape::new();
    let (loss, vars) = scalar(inputs, &mut tape);
    tape.backward(loss).expect("scalar loss");
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| tape.grad(*v).map_or(vec![0.0; t.numel()], |g| g.to_vec()))
        .collect();
    let eval = |inputs: &[Tensor]| {
        let mut t = Tape::new();
        let (l, _) = scalar(inputs, &mut t);
        t.value(l)[0]
    };
    let mut checked = 0;
    for (i, g) in grads.iter().enumerate() {
        for (j, &a) in g.iter().enumerate() {
            let numeric = central(|d| {
                let mut x = inputs.to_vec();
                x[i].data_mut()[j] += d;
                eval(&x)
            });
            compare(|| format!("{name} input {i}[{j}]"), a, numeric)?;
            checked += 1;
        }
    }
    Ok(checked)
}

/// Every differentiable tape op on small random inputs.
pub fn check_all_ops() -> Result<usize, Mismatch> {
    let a = randn(&[3, 4], 1);
    let b = randn(&[4, 2], 2);
    let c = randn(&[3, 4], 3);
    let bias = randn(&[4], 4);
    let x = randn(&[5, 6], 5);
    let (gamma, beta) = (randn(&[6], 6), randn(&[6], 7));
    let (q, k, v) = (randn(&[5, 6], 8), randn(&[5, 6], 9), randn(&[5, 6], 10));
    let r = randn(&[5, 8], 11);
    let table = randn(&[7, 3], 12);
    let logits = randn(&[4, 7], 13);
    let mut n = 0;
    n += check_op("matmul", &[a.clone(), b], |t, v| t.matmul(v[0], v[1]).unwrap())?;
    n += check_op("add", &[a.clone(), c.clone()], |t, v| t.add(v[0], v[1]).unwrap())?;
    n += check_op("add_row", &[a.clone(), bias], |t, v| t.add_row(v[0], v[1]).unwrap())?;
    n += check_op("mul", &[a.clone(), c.clone()], |t, v| t.mul(v[0], v[1]).unwrap())?;
    n += check_op("scale", &[a.clone()], |t, v| t.scale(v[0], -1.7))?;
    n += check_op("gelu", &[a.clone()], |t, v| t.gelu(v[0]))?;
    n += check_op("silu", &[a.clone()], |t, v| t.silu(v[0]))?;
    n += check_op("transpose", &[a.clone()], |t, v| t.transpose(v[0]).unwrap())?;
    n += check_op("slice_rows", &[a.clone()], |t, v| t.slice_rows(v[0], 1, 2).unwrap())?;
    n += check_op("concat_rows", &[a.clone(), c], |t, v| t.concat_rows(v[0], v[1]).unwrap())?;
    n += check_op("mean", &[a.clone()], |t, v| t.mean(v[0]))?;
    n += check_op("sum", &[a], |t, v| t.sum(v[0]))?;
    n += check_op("layer_norm", &[x, gamma, beta], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap())?;
    n += check_op("causal_attention", &[q, k, v], |t, v| t.causal_attention(v[0], v[1], v[2], 2).unwrap())?;
    n += check_op("rope", &[r], |t, v| t.rope(v[0], 2, 10_000.0).unwrap())?;
    n += check_op("embedding", &[table], |t, v| t.embedding(v[0], &[2, 0, 2, 6]).unwrap())?;
    n += check_op("softmax_cross_entropy", &[logits.clone()], |t, v| {
        t.softmax_cross_entropy(v[0], &[1, 6, 0, 1]).unwrap()
    })?;
    n += check_op("cross_entropy_scaled", &[logits], |t, v| {
        t.cross_entropy_scaled(v[0], &[3, 3, 2, 5], 0.3).unwrap()
    })?;
    Ok(n)
}

/// `n` seeded (parameter, element) picks.
pub fn probes(sizes: &[usize], n: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let p = rng.gen_range(0..sizes.len());
            (p, rng.gen_range(0..sizes[p]))
        })
        .collect()
}

/// Language-model loss gradient of a two-block toy transformer at `n_probes`
/// parameter entries.
pub fn check_transformer(arch: Architecture, n_probes: usize, seed: u64) -> Result<usize, Mismatch> {
    let cfg = ModelConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_ff: 12,
        vocab_size: 11,
        max_seq_len: 8,
        architecture: arch,
    };
    let model = TransformerModel::init(cfg, 3).expect("valid toy config");
    let batch = LmBatch::new(vec![vec![1, 4, 9, 4, 2], vec![1, 7, 3, 10]]).expect("valid batch");
    let mut grads = model.clone();
    grads.zero_grads();
    let scale = 1.0 / batch.num_targets() as f64;
    for chunk in &batch.chunks {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, true);
        let x = model.embed_ids(&mut tape, &vars, &chunk[..chunk.len() - 1]).unwrap();
        let outs = model.run_blocks(&mut tape, &vars, x, 0..2).unwrap();
        let logits = model.logits(&mut tape, &vars, *outs.last().unwrap()).unwrap();
        let loss = tape.cross_entropy_scaled(logits, &chunk[1..], scale).unwrap();
        tape.backward(loss).unwrap();
        grads.accumulate_grads(&tape, &vars).unwrap();
    }
    let sizes: Vec<usize> = model.params().iter().map(|p| p.numel()).collect();
    let names = model.param_names();
    let picks = probes(&sizes, n_probes, seed);
    for &(p, j) in &picks {
        let numeric = central(|d| {
            let mut m = model.clone();
            m.params_mut()[p].data_mut()[j] += d;
            lm_batch_loss(&m, &batch).unwrap()
        });
        let a = grads.params()[p].grad().expect("zeroed above")[j];
        compare(|| format!("{arch:?} {}[{j}]", names[p]), a, numeric)?;
    }
    Ok(picks.len())
}

/// Teacher-forced attack-model loss gradient at `n_probes` entries.
pub fn check_attack_model(n_probes: usize, seed: u64) -> Result<usize, Mismatch> {
    let cfg = AttackModelConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_ff: 12,
        vocab_size: 11,
        max_seq_len: 8,
        architecture: Architecture::B,
    };
    let model = AttackModel::init(cfg, 4).expect("valid toy config");
    let act = randn(&[5, 8], 21);
    let labels = [1, 5, 9, 0, 2];
    let loss_of = |m: &AttackModel| {
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape, true);
        let x = tape.leaf_as(&act, false);
        let logits = m.forward_tape(&mut tape, &vars, x).unwrap();
        let loss = tape.cross_entropy_scaled(logits, &labels, 0.2).unwrap();
        (tape, vars, loss)
    };
    let (mut tape, vars, loss) = loss_of(&model);
    tape.backward(loss).unwrap();
    let mut grads = model.clone();
    grads.zero_grads();
    grads.accumulate_grads(&tape, &vars).unwrap();
    let sizes: Vec<usize> = model.params().iter().map(|p| p.numel()).collect();
    let picks = probes(&sizes, n_probes, seed);
    for &(p, j) in &picks {
        let numeric = central(|d| {
            let mut m = model.clone();
            m.params_mut()[p].data_mut()[j] += d;
            let (t, _, l) = loss_of(&m);
            t.value(l)[0]
        });
        let a = grads.params()[p].grad().expect("zeroed above")[j];
        compare(|| format!("attack param {p}[{j}]"), a, numeric)?;
    }
    Ok(picks.len())
}
