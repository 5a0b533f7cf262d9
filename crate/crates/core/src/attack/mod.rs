//! The curious stage's side: shadow dataset from a frozen copy of the
//! pre-trained model, attack-model training with teacher forcing,
//! reconstruction of recorded activations, and two prompt-based baselines.

mod baselines;
mod shadow;
mod train;

pub use baselines::{
    baseline_spt, baseline_true_prefix, query, true_prefix_prompt, SoftPrompt, SptConfig, GENERATION_TOKENS,
    QUERY_TEMPLATE, SOFT_PROMPT_LEN, SPT_TRAIN_PAIRS,
};
pub use shadow::{
    build_shadow_dataset, load_shadow_dataset, save_shadow_dataset, ShadowDataset, ShadowFingerprint, ShadowPair,
};
pub use train::{
    holdout_split, mean_loss, pair_loss, reconstruct, reconstruction_lines, train_attack_model, AttackEpoch,
    AttackTrainConfig, AttackTraining, ReconstructionLine,
};

#[cfg(test)]
mod tests;
