//! Reconstruction and leakage metrics: perplexity, ROUGE-1/2/L,
//! BLEU-1/2/4, embedding cosine and PII exact-match success rate.

mod text;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use text::{bleu_n, rouge_l, rouge_n, tokenize};

use crate::data::{PiiRecord, PiiType, Vocab};
use crate::error::{contract_err, Result};
use crate::kernels::log_sum_exp;
use crate::model::{AttackModel, TransformerModel};
use crate::pipeline::cosine;
use crate::tensor::Tensor;

/// `exp` of the mean negative log-likelihood of `targets` under row-wise
/// softmax of `logits`, pooled over every pair.
pub fn perplexity_from_logits(logits: &[Tensor], targets: &[Vec<usize>]) -> Result<f64> {
    if logits.len() != targets.len() {
        return contract_err(format!("{} logit blocks for {} references", logits.len(), targets.len()));
    }
    let mut nll = 0.0;
    let mut count = 0usize;
    for (l, t) in logits.iter().zip(targets) {
        if l.rows() != t.len() {
            return contract_err(format!("{} logit rows for {} reference tokens", l.rows(), t.len()));
        }
        for (k, &y) in t.iter().enumerate() {
            let row = l.row(k);
            if y >= row.len() {
                return crate::error::index_err(format!("reference id {y} outside vocabulary of {}", row.len()));
            }
            nll += log_sum_exp(row) - row[y];
        }
        count += t.len();
    }
    if count == 0 {
        return contract_err("empty reference");
    }
    Ok((nll / count as f64).exp())
}

/// Teacher-forced attack-model perplexity of reference ids given the
/// activation each was recorded with (position-aligned).
pub fn perplexity(attack: &AttackModel, pairs: &[(&Tensor, &[usize])]) -> Result<f64> {
    let mut logits = Vec::with_capacity(pairs.len());
    let mut targets = Vec::with_capacity(pairs.len());
    for (a, y) in pairs {
        logits.push(attack.forward_attack(a)?);
        targets.push(y.to_vec());
    }
    perplexity_from_logits(&logits, &targets)
}

/// Mean-pooled final-block activation of `text` under `encoder`, truncated
/// to its context length.
pub fn sentence_embedding(encoder: &TransformerModel, vocab: &Vocab, text: &str) -> Result<Vec<f64>> {
    if text.is_empty() {
        return contract_err("cannot embed an empty text");
    }
    let mut ids = vocab.encode(text);
    ids.truncate(encoder.config.max_seq_len);
    let (_, acts) = encoder.forward_full(&ids)?;
    let last = acts.last().expect("n_layers >= 1");
    let d = last.cols();
    let mut mean = vec![0.0; d];
    for r in 0..last.rows() {
        mean.iter_mut().zip(last.row(r)).for_each(|(m, x)| *m += x);
    }
    let n = last.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Cosine of the two texts' sentence embeddings under the frozen shadow model.
pub fn embedding_cosine(candidate: &str, reference: &str, encoder: &TransformerModel, vocab: &Vocab) -> Result<f64> {
    let a = sentence_embedding(encoder, vocab, candidate)?;
    let b = sentence_embedding(encoder, vocab, reference)?;
    Ok(cosine(&a, &b))
}

/// Alphanumeric characters of a PII value, in order, casing kept.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NormalizedPii(String);

impl NormalizedPii {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

pub fn normalize_pii(value: &str) -> NormalizedPii {
    NormalizedPii(value.chars().filter(|c| c.is_alphanumeric()).collect())
}

/// Whether the normalised true value occurs inside the normalised generation.
pub fn pii_matches(generation: &str, truth: &str) -> bool {
    let t = normalize_pii(truth);
    !t.0.is_empty() && normalize_pii(generation).0.contains(&t.0)
}

/// Fraction of records whose `target` value is recovered by the
/// generation at the same index.
pub fn asr_exact_match(generations: &[String], records: &[PiiRecord], target: PiiType) -> Result<f64> {
    if generations.len() != records.len() {
        return contract_err(format!("{} generations for {} records", generations.len(), records.len()));
    }
    if records.is_empty() {
        return contract_err("no records to score");
    }
    let hits = generations
        .iter()
        .zip(records)
        .filter(|(g, r)| pii_matches(g, r.get(target)))
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Corpus-level text metrics plus per-type ASR.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ppl: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu4: f64,
    pub cos: f64,
    pub asr: BTreeMap<String, f64>,
}

impl MetricReport {
    /// Means of the per-pair ROUGE/BLEU/COS scores. `encoder` is the frozen
    /// shadow model used for COS.
    pub fn score_texts(
        candidates: &[String],
        references: &[String],
        ppl: f64,
        encoder: &TransformerModel,
        vocab: &Vocab,
    ) -> Result<Self> {
        if candidates.len() != references.len() || candidates.is_empty() {
            return contract_err(format!(
                "{} candidates for {} references",
                candidates.len(),
                references.len()
            ));
        }
        let n = candidates.len() as f64;
        let mut r = MetricReport {
            ppl,
            ..Default::default()
        };
        for (c, t) in candidates.iter().zip(references) {
            r.rouge1 += rouge_n(c, t, 1)? / n;
            r.rouge2 += rouge_n(c, t, 2)? / n;
            r.rouge_l += rouge_l(c, t) / n;
            r.bleu1 += bleu_n(c, t, 1)? / n;
            r.bleu2 += bleu_n(c, t, 2)? / n;
            r.bleu4 += bleu_n(c, t, 4)? / n;
            r.cos += if c.is_empty() || t.is_empty() {
                0.0
            } else {
                embedding_cosine(c, t, encoder, vocab)? / n
            };
        }
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0 + 1e-12).contains(&x);
        let ok = self.ppl >= 1.0 - 1e-12
            && [self.rouge1, self.rouge2, self.rouge_l, self.bleu1, self.bleu2, self.bleu4]
                .into_iter()
                .all(unit)
            && (-1.0 - 1e-12..=1.0 + 1e-12).contains(&self.cos)
            && self.asr.values().copied().all(unit);
        if !ok {
            return contract_err(format!("metric report out of range: {self:?}"));
        }
        Ok(())
    }
}
