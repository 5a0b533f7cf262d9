use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};

const PUBLIC_TEXT: &str = include_str!("../../corpora/public.txt");
const VICTIM_TEXT: &str = include_str!("../../corpora/victim.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusRole {
    /// Text the attacker may read (shadow data source).
    Public,
    /// Private fine-tuning data of the victim.
    Victim,
    Eval,
}

impl fmt::Display for CorpusRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CorpusRole::Public => "public",
            CorpusRole::Victim => "victim",
            CorpusRole::Eval => "eval",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    name: String,
    role: CorpusRole,
    documents: Vec<String>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, role: CorpusRole, documents: Vec<String>) -> Result<Self> {
        let name = name.into();
        if documents.is_empty() {
            return contract_err(format!("corpus '{name}' has no documents"));
        }
        Ok(Corpus {
            name,
            role,
            documents,
        })
    }

    /// Parses UTF-8 text where documents are separated by blank lines.
    pub fn from_text(name: impl Into<String>, role: CorpusRole, text: &str) -> Result<Self> {
        let mut docs = Vec::new();
        let mut current: Vec<&str> = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                if !current.is_empty() {
                    docs.push(current.join("\n"));
                    current.clear();
                }
            } else {
                current.push(line.trim_end());
            }
        }
        if !current.is_empty() {
            docs.push(current.join("\n"));
        }
        Self::new(name, role, docs)
    }

    pub fn load(path: &Path, role: CorpusRole) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".into());
        Self::from_text(name, role, &text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> CorpusRole {
        self.role
    }

    pub fn documents(&self) -> &[String] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// The first `n` documents (all of them if `n` exceeds the size).
    pub fn take(&self, n: usize) -> Result<Corpus> {
        Corpus::new(
            self.name.clone(),
            self.role,
            self.documents.iter().take(n).cloned().collect(),
        )
    }

    /// Total characters across documents.
    pub fn char_count(&self) -> usize {
        self.documents.iter().map(|d| d.chars().count()).sum()
    }
}

/// Encyclopedic-style text shipped with the crate (attacker-readable).
pub fn bundled_public() -> Corpus {
    Corpus::from_text("public", CorpusRole::Public, PUBLIC_TEXT).expect("bundled corpus is non-empty")
}

/// Web/abstract-style text shipped with the crate (victim fine-tuning data).
pub fn bundled_victim() -> Corpus {
    Corpus::from_text("victim", CorpusRole::Victim, VICTIM_TEXT).expect("bundled corpus is non-empty")
}

/// Fails if any document appears in both corpora.
pub fn ensure_disjoint(public: &Corpus, victim: &Corpus) -> Result<()> {
    let seen: HashSet<&str> = public.documents.iter().map(String::as_str).collect();
    if let Some(doc) = victim.documents.iter().find(|d| seen.contains(d.as_str())) {
        let preview: String = doc.chars().take(40).collect();
        return contract_err(format!(
            "corpora '{}' and '{}' share a document: {preview}…",
            public.name, victim.name
        ));
    }
    Ok(())
}

/// Shuffles documents under `seed` and cuts them by `fractions`.
pub fn split_corpus(corpus: &Corpus, fractions: &[f64], seed: u64) -> Result<Vec<Corpus>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0)) {
        return contract_err(format!("split fractions must be positive, got {fractions:?}"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return contract_err(format!("split fractions sum to {total}, not 1"));
    }
    let n = corpus.documents.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut parts = Vec::with_capacity(fractions.len());
    let mut cum = 0.0;
    let mut start = 0;
    for (i, f) in fractions.iter().enumerate() {
        cum += f;
        let end = if i + 1 == fractions.len() {
            n
        } else {
            ((cum * n as f64).round() as usize).clamp(start, n)
        };
        let docs: Vec<String> = order[start..end]
            .iter()
            .map(|&j| corpus.documents[j].clone())
            .collect();
        if docs.is_empty() {
            return contract_err(format!(
                "split part {i} of corpus '{}' would be empty ({n} documents)",
                corpus.name
            ));
        }
        parts.push(Corpus::new(format!("{}.{i}", corpus.name), corpus.role, docs)?);
        start = end;
    }
    Ok(parts)
}

/// Non-overlapping windows of at most `size` tokens (stride `size`).
pub fn token_windows(ids: &[usize], size: usize) -> Vec<Vec<usize>> {
    assert!(size > 0, "window size must be positive");
    ids.chunks(size).map(<[usize]>::to_vec).collect()
}

/// Language-model chunks of at most `max_seq_len + 1` tokens with stride
/// `max_seq_len`, so consecutive chunk inputs tile the sequence. Chunks
/// shorter than two tokens carry no target and are dropped.
pub fn lm_chunks(ids: &[usize], max_seq_len: usize) -> Vec<Vec<usize>> {
    assert!(max_seq_len > 0, "max_seq_len must be positive");
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < ids.len() {
        let end = (start + max_seq_len + 1).min(ids.len());
        out.push(ids[start..end].to_vec());
        start += max_seq_len;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(n: usize) -> Corpus {
        Corpus::new(
            "c",
            CorpusRole::Victim,
            (0..n).map(|i| format!("doc {i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn parses_blank_line_separated_documents() {
        let c = Corpus::from_text("x", CorpusRole::Public, "one\nline two\n\n\n three \n\n").unwrap();
        assert_eq!(c.documents(), &["one\nline two".to_string(), " three".to_string()]);
        assert!(Corpus::from_text("x", CorpusRole::Public, "\n\n").is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = docs(10);
        let parts = split_corpus(&c, &[0.8, 0.2], 3).unwrap();
        assert_eq!(parts[0].len(), 8);
        assert_eq!(parts[1].len(), 2);
        let again = split_corpus(&c, &[0.8, 0.2], 3).unwrap();
        assert_eq!(parts, again);
    }

    #[test]
    fn split_is_a_partition() {
        let c = docs(37);
        let parts = split_corpus(&c, &[0.5, 0.3, 0.2], 11).unwrap();
        let mut all: Vec<String> = parts.iter().flat_map(|p| p.documents().to_vec()).collect();
        all.sort();
        let mut orig = c.documents().to_vec();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let c = docs(10);
        assert!(split_corpus(&c, &[0.5, 0.4], 0).is_err());
        assert!(split_corpus(&c, &[1.2, -0.2], 0).is_err());
        assert!(split_corpus(&c, &[], 0).is_err());
    }

    #[test]
    fn bundled_corpora_are_disjoint() {
        let (p, v) = (bundled_public(), bundled_victim());
        assert!(p.len() > 100 && v.len() > 100);
        ensure_disjoint(&p, &v).unwrap();
        let dup = Corpus::new("d", CorpusRole::Victim, vec![p.documents()[3].clone()]).unwrap();
        assert!(ensure_disjoint(&p, &dup).is_err());
    }

    #[test]
    fn lm_chunk_inputs_tile_the_sequence() {
        let ids: Vec<usize> = (0..23).collect();
        let chunks = lm_chunks(&ids, 5);
        let inputs: Vec<usize> = chunks.iter().flat_map(|c| c[..c.len() - 1].to_vec()).collect();
        assert_eq!(inputs, ids[..22].to_vec());
        assert!(chunks.iter().all(|c| c.len() >= 2 && c.len() <= 6));
        assert_eq!(token_windows(&ids, 10).len(), 3);
    }
}
