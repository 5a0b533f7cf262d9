//! ROUGE and BLEU over lowercase whitespace tokens. Punctuation stays
//! attached to its word.

use std::collections::HashMap;

use crate::error::{contract_err, Result};

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_overlap(cand: &HashMap<&[String], usize>, refs: &HashMap<&[String], usize>) -> usize {
    cand.iter().map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0))).sum()
}

fn f1(overlap: usize, cand: usize, refs: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand as f64;
    let r = overlap as f64 / refs as f64;
    2.0 * p * r / (p + r)
}

/// ROUGE-N F1 for `n` in {1, 2}. Two texts without any n-gram score 1 when
/// their tokens agree; one side without n-grams scores 0.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Result<f64> {
    if !(1..=2).contains(&n) {
        return contract_err(format!("ROUGE-N is defined here for n in 1..=2, got {n}"));
    }
    let (c, r) = (tokenize(candidate), tokenize(reference));
    let (cn, rn) = (ngrams(&c, n), ngrams(&r, n));
    let (ct, rt): (usize, usize) = (cn.values().sum(), rn.values().sum());
    if ct == 0 || rt == 0 {
        return Ok(if ct == 0 && rt == 0 && c == r { 1.0 } else { 0.0 });
    }
    Ok(f1(clipped_overlap(&cn, &rn), ct, rt))
}

pub(crate) fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 from the longest common token subsequence.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let (c, r) = (tokenize(candidate), tokenize(reference));
    if c.is_empty() || r.is_empty() {
        return if c.is_empty() && r.is_empty() { 1.0 } else { 0.0 };
    }
    f1(lcs_len(&c, &r), c.len(), r.len())
}

/// BLEU with clipped n-gram precisions for orders `1..=max_n` and brevity
/// penalty `min(1, e^(1 - r/c))`. A zero precision at order n is replaced
/// by `1 / (2 · candidate n-gram count)`; orders for which the candidate
/// has no n-gram at all are left out of the geometric mean.
pub fn bleu_n(candidate: &str, reference: &str, max_n: usize) -> Result<f64> {
    if ![1, 2, 4].contains(&max_n) {
        return contract_err(format!("BLEU order must be 1, 2 or 4, got {max_n}"));
    }
    let (c, r) = (tokenize(candidate), tokenize(reference));
    if c.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=max_n {
        let cn = ngrams(&c, n);
        let total: usize = cn.values().sum();
        if total == 0 {
            break;
        }
        let overlap = clipped_overlap(&cn, &ngrams(&r, n));
        let p = if overlap == 0 {
            1.0 / (2.0 * total as f64)
        } else {
            overlap as f64 / total as f64
        };
        log_sum += p.ln();
        orders += 1;
    }
    let bp = (1.0 - r.len() as f64 / c.len() as f64).exp().min(1.0);
    Ok((bp * (log_sum / orders as f64).exp()).clamp(0.0, 1.0))
}
