//! Desk-scale simulator of pipeline-parallel language-model fine-tuning with
//! an honest-but-curious stage that inverts the activations it receives.
//!
//! Layers, bottom up:
//! - [`tensor`], [`tape`], [`optim`]: dense `f64` tensors, reverse-mode AD, AdamW.
//! - [`data`]: character vocabulary, corpora, synthetic PII records.
//! - [`model`]: decoder-only transformers (three architecture variants) and
//!   the embedding-free attack model.
//! - [`pipeline`]: stage partitioning, pipelined training, the activation tap.
//! - [`attack`]: shadow dataset, attack-model training, reconstruction and
//!   the True-Prefix / soft-prompt baselines.
//! - [`metrics`]: perplexity, ROUGE, BLEU, embedding cosine, PII ASR.

pub mod attack;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
