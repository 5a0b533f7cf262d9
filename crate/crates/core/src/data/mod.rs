//! Tokenization, corpora and the synthetic PII generator.

mod corpus;
mod pii;
mod vocab;

pub use corpus::{
    bundled_public, bundled_victim, ensure_disjoint, lm_chunks, split_corpus, token_windows, Corpus,
    CorpusRole,
};
pub use pii::{generate_pii_dataset, pii_to_json, PiiRecord, PiiType};
pub use vocab::{build_vocab, Vocab, BOS, EOS, PAD, RESERVED, UNK};
