use std::collections::BTreeMap;

use aia_core::attack::{baseline_spt, baseline_true_prefix, reconstruct, SptConfig, SPT_TRAIN_PAIRS};
use aia_core::data::{PiiRecord, PiiType, Vocab};
use aia_core::metrics::asr_exact_match;
use aia_core::model::{AttackModel, TransformerModel};
use serde::{Deserialize, Serialize};

use crate::error::{metric, ExpError, ExpResult, StepContext};
use crate::steps::VictimRun;

/// One text per training document: first-epoch reconstructions of its
/// chunks joined in document order. `run` must be a fine-tune over one
/// document per record.
pub fn aia_document_texts(attack: &AttackModel, run: &VictimRun, n_docs: usize, vocab: &Vocab) -> ExpResult<Vec<String>> {
    let first = run.first_epoch();
    let records: Vec<_> = first.iter().map(|&r| r.clone()).collect();
    let texts = reconstruct(attack, &records, vocab).step("reconstruct")?;
    let mut parts: Vec<BTreeMap<usize, String>> = vec![BTreeMap::new(); n_docs];
    for (r, t) in first.iter().zip(texts) {
        let chunk = aia_core::pipeline::record_chunk(&run.schedule, r).expect("first-epoch record is scheduled");
        let src = run.data.sources[chunk];
        let doc = parts.get_mut(src.document).ok_or_else(|| ExpError::Step {
            step: "map records".into(),
            message: format!("document {} beyond {n_docs}", src.document),
        })?;
        doc.insert(src.index, t);
    }
    Ok(parts.into_iter().map(|m| m.into_values().collect::<String>()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsrRow {
    pub method: String,
    /// Target type to ASR.
    pub asr: BTreeMap<String, f64>,
}

/// Table-2-shaped comparison: one row per method, one column per target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsrTable {
    /// Records scored (those not used to train the soft prompt).
    pub evaluated_records: usize,
    pub rows: Vec<AsrRow>,
}

impl AsrTable {
    pub fn get(&self, method: &str, target: PiiType) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method)
            .and_then(|r| r.asr.get(target.as_str()).copied())
    }
}

pub const METHODS: [&str; 3] = ["true-prefix", "spt", "aia"];

/// Runs True-Prefix, SPT and the activation inversion attack against the
/// same victim. Records `[..64]` train the soft prompt; every method is
/// scored on the remaining records.
pub fn compare_methods(
    victim: &TransformerModel,
    attack: &AttackModel,
    run: &VictimRun,
    records: &[PiiRecord],
    targets: &[PiiType],
    vocab: &Vocab,
    spt: &SptConfig,
) -> ExpResult<AsrTable> {
    if records.len() <= SPT_TRAIN_PAIRS {
        return Err(ExpError::Config(format!(
            "need more than {SPT_TRAIN_PAIRS} PII records, got {}",
            records.len()
        )));
    }
    let (train, eval) = records.split_at(SPT_TRAIN_PAIRS);
    let aia_all = aia_document_texts(attack, run, records.len(), vocab)?;
    let aia = &aia_all[SPT_TRAIN_PAIRS..];
    let mut rows: Vec<AsrRow> = METHODS
        .iter()
        .map(|m| AsrRow {
            method: m.to_string(),
            asr: BTreeMap::new(),
        })
        .collect();
    for &t in targets {
        let tp = baseline_true_prefix(victim, eval, t, vocab).step("true-prefix baseline")?;
        let (_, sp) = baseline_spt(victim, train, eval, t, vocab, spt).step("soft-prompt baseline")?;
        for (row, gens) in rows.iter_mut().zip([&tp[..], &sp[..], aia]) {
            row.asr.insert(t.as_str().into(), metric(asr_exact_match(gens, eval, t))?);
        }
    }
    Ok(AsrTable {
        evaluated_records: eval.len(),
        rows,
    })
}
