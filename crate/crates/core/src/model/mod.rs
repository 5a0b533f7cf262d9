//! Decoder-only transformers with per-layer activation exposure, plus the
//! embedding-free attack model that maps activation sequences to tokens.

mod attack_model;
mod block;
mod checkpoint;
mod config;
mod layers;
mod train;
mod transformer;

pub use attack_model::{decode_greedy, greedy_tokens, AttackModel, AttackVars};
pub use block::Block;
pub use checkpoint::{load_attack_model, load_model, save_attack_model, save_model};
pub use config::{Architecture, AttackModelConfig, ModelConfig, LN_EPS, ROPE_BASE};
pub use layers::{Embedder, Head, Module};
pub use train::{finetune_step, generate_greedy, lm_batch_loss, LmBatch};
pub use transformer::{ModelVars, TransformerModel};
