use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{token_windows, Corpus, Vocab};
use crate::error::{contract_err, index_err, Error, Result};
use crate::model::{ModelConfig, TransformerModel};
use crate::tensor::Tensor;

/// One shadow activation and the token ids that produced it, row for row.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowPair {
    pub activation: Tensor,
    pub labels: Vec<usize>,
    pub document: usize,
}

/// Identifies the frozen model a shadow dataset was computed with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShadowFingerprint {
    pub config: ModelConfig,
    pub param_hash: String,
}

impl ShadowFingerprint {
    pub fn of(model: &TransformerModel) -> Self {
        ShadowFingerprint {
            config: model.config.clone(),
            param_hash: model.param_hash(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShadowDataset {
    pub pairs: Vec<ShadowPair>,
    /// Activations are taken after this many blocks.
    pub layer_cut: usize,
    pub fingerprint: ShadowFingerprint,
}

impl ShadowDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn width(&self) -> usize {
        self.fingerprint.config.d_model
    }
}

/// Runs every public document through the first `layer_cut` blocks of the
/// frozen shadow model, in windows of `max_seq_len` tokens with stride
/// `max_seq_len`.
pub fn build_shadow_dataset(
    shadow: &TransformerModel,
    public: &Corpus,
    vocab: &Vocab,
    layer_cut: usize,
) -> Result<ShadowDataset> {
    if public.is_empty() {
        return contract_err("empty public corpus");
    }
    if layer_cut < 1 || layer_cut > shadow.config.n_layers {
        return index_err(format!("layer cut {layer_cut} outside 1..={}", shadow.config.n_layers));
    }
    let fingerprint = ShadowFingerprint::of(shadow);
    let mut pairs = Vec::new();
    for (document, text) in public.documents().iter().enumerate() {
        for labels in token_windows(&vocab.encode(text), shadow.config.max_seq_len) {
            let activation = shadow.forward_prefix(&labels, layer_cut)?;
            pairs.push(ShadowPair {
                activation,
                labels,
                document,
            });
        }
    }
    debug_assert_eq!(fingerprint.param_hash, shadow.param_hash());
    Ok(ShadowDataset {
        pairs,
        layer_cut,
        fingerprint,
    })
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    document: usize,
    labels: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Index {
    layer_cut: usize,
    fingerprint: ShadowFingerprint,
    blob: String,
    pairs: Vec<IndexEntry>,
}

const INDEX: &str = "index.json";
const BLOB: &str = "activations.aiat";

/// Writes `dir/index.json` and `dir/activations.aiat` (AIAT records
/// back to back; the index stores each record's byte offset).
pub fn save_shadow_dataset(dir: &Path, ds: &ShadowDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = BufWriter::new(File::create(dir.join(BLOB))?);
    let mut offset = 0u64;
    let mut entries = Vec::with_capacity(ds.len());
    for p in &ds.pairs {
        let bytes = p.activation.to_aiat_bytes();
        blob.write_all(&bytes)?;
        entries.push(IndexEntry {
            document: p.document,
            labels: p.labels.clone(),
            offset,
        });
        offset += bytes.len() as u64;
    }
    blob.flush()?;
    let index = Index {
        layer_cut: ds.layer_cut,
        fingerprint: ds.fingerprint.clone(),
        blob: BLOB.into(),
        pairs: entries,
    };
    fs::write(dir.join(INDEX), serde_json::to_vec_pretty(&index)?)?;
    Ok(())
}

pub fn load_shadow_dataset(dir: &Path) -> Result<ShadowDataset> {
    let index: Index = serde_json::from_slice(&fs::read(dir.join(INDEX))?)?;
    let mut blob = BufReader::new(File::open(dir.join(&index.blob))?);
    let mut pairs = Vec::with_capacity(index.pairs.len());
    for e in index.pairs {
        blob.seek(SeekFrom::Start(e.offset))?;
        let activation = Tensor::read_aiat(&mut blob)?;
        if activation.rows() != e.labels.len() {
            return Err(Error::Format(format!(
                "pair at offset {} has {} rows for {} labels",
                e.offset,
                activation.rows(),
                e.labels.len()
            )));
        }
        pairs.push(ShadowPair {
            activation,
            labels: e.labels,
            document: e.document,
        });
    }
    Ok(ShadowDataset {
        pairs,
        layer_cut: index.layer_cut,
        fingerprint: index.fingerprint,
    })
}
