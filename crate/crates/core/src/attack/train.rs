use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::shadow::{ShadowDataset, ShadowPair};
use crate::data::Vocab;
use crate::error::{contract_err, shape_err, Result};
use crate::model::{decode_greedy, AttackModel, AttackModelConfig, Module};
use crate::optim::{AdamWConfig, OptimizerState};
use crate::pipeline::ActivationRecord;
use crate::tape::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackTrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Pairs per optimizer step; a value of at least the training-split
    /// size gives full-batch training.
    pub batch_size: usize,
    /// Share of pairs held out for early stopping (0 disables it).
    pub holdout_fraction: f64,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
}

impl Default for AttackTrainConfig {
    fn default() -> Self {
        AttackTrainConfig {
            max_epochs: 300,
            learning_rate: 5e-4,
            batch_size: 8,
            holdout_fraction: 0.1,
            patience: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct AttackTraining {
    pub model: AttackModel,
    /// Training-split loss before the first update.
    pub initial_loss: f64,
    pub epochs: Vec<AttackEpoch>,
    /// Epoch whose parameters were kept (best held-out loss).
    pub best_epoch: usize,
    pub train_indices: Vec<usize>,
    pub heldout_indices: Vec<usize>,
}

impl AttackTraining {
    pub fn final_train_loss(&self) -> f64 {
        self.epochs
            .get(self.best_epoch)
            .map_or(self.initial_loss, |e| e.train_loss)
    }
}

/// Mean cross-entropy of the attack logits against the pair's labels, row
/// `k` scored against label `k`.
pub fn pair_loss(model: &AttackModel, pair: &ShadowPair) -> Result<f64> {
    mean_loss(model, &[pair])
}

/// Token-weighted mean loss over `pairs`.
pub fn mean_loss(model: &AttackModel, pairs: &[&ShadowPair]) -> Result<f64> {
    let total: usize = pairs.iter().map(|p| p.labels.len()).sum();
    if total == 0 {
        return contract_err("no labels to score");
    }
    let mut sum = 0.0;
    for p in pairs {
        model.check_activation(&p.activation)?;
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, false);
        let x = tape.leaf_as(&p.activation, false);
        let logits = model.forward_tape(&mut tape, &vars, x)?;
        let loss = tape.cross_entropy_scaled(logits, &p.labels, 1.0)?;
        sum += tape.value(loss)[0];
    }
    Ok(sum / total as f64)
}

/// Accumulates gradients of the token-weighted loss over `pairs` into the
/// model; `scale` is `1 / tokens in the step`.
fn accumulate(model: &mut AttackModel, pairs: &[&ShadowPair], scale: f64) -> Result<f64> {
    let mut sum = 0.0;
    for p in pairs {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, true);
        let x = tape.leaf_as(&p.activation, false);
        let logits = model.forward_tape(&mut tape, &vars, x)?;
        let loss = tape.cross_entropy_scaled(logits, &p.labels, scale)?;
        sum += tape.value(loss)[0];
        tape.backward(loss)?;
        model.accumulate_grads(&tape, &vars)?;
    }
    Ok(sum)
}

/// Seeded split of pair indices into (train, held-out).
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0ff5));
    let held = if n >= 2 && fraction > 0.0 {
        ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let train = order.split_off(held);
    (train, order)
}

/// Teacher-forced training of a fresh attack model on a shadow dataset with
/// minibatch AdamW. Keeps the parameters of the epoch with the lowest
/// held-out loss and stops after `patience` epochs without improvement.
pub fn train_attack_model(
    dataset: &ShadowDataset,
    config: &AttackModelConfig,
    train: &AttackTrainConfig,
    seed: u64,
) -> Result<AttackTraining> {
    if dataset.is_empty() {
        return contract_err("empty shadow dataset");
    }
    if config.d_model != dataset.width() {
        return shape_err(format!(
            "attack width {} for activations of width {}",
            config.d_model,
            dataset.width()
        ));
    }
    if train.batch_size == 0 || !(0.0..1.0).contains(&train.holdout_fraction) {
        return contract_err(format!("invalid attack training config {train:?}"));
    }
    let mut model = AttackModel::init(config.clone(), seed)?;
    for p in &dataset.pairs {
        model.check_activation(&p.activation)?;
    }
    let (train_idx, held_idx) = holdout_split(dataset.len(), train.holdout_fraction, seed);
    let held: Vec<&ShadowPair> = held_idx.iter().map(|&i| &dataset.pairs[i]).collect();
    let train_pairs: Vec<&ShadowPair> = train_idx.iter().map(|&i| &dataset.pairs[i]).collect();
    let initial_loss = mean_loss(&model, &train_pairs)?;

    let mut opt = OptimizerState::new(AdamWConfig::with_lr(train.learning_rate))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let mut epochs = Vec::new();
    let mut best: (f64, usize, Option<AttackModel>) = (f64::INFINITY, 0, None);
    for epoch in 0..train.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut tokens = 0usize;
        for group in order.chunks(train.batch_size) {
            let batch: Vec<&ShadowPair> = group.iter().map(|&i| train_pairs[i]).collect();
            let n: usize = batch.iter().map(|p| p.labels.len()).sum();
            sum += accumulate(&mut model, &batch, 1.0 / n as f64)? * n as f64;
            tokens += n;
            opt.step(&mut model.params_mut())?;
        }
        let train_loss = sum / tokens as f64;
        let heldout_loss = if held.is_empty() {
            None
        } else {
            Some(mean_loss(&model, &held)?)
        };
        epochs.push(AttackEpoch {
            epoch,
            train_loss,
            heldout_loss,
        });
        let Some(score) = heldout_loss else {
            best.1 = epoch;
            continue;
        };
        if score < best.0 {
            best = (score, epoch, Some(model.clone()));
        } else if epoch - best.1 >= train.patience {
            break;
        }
    }
    let (_, best_epoch, kept) = best;
    Ok(AttackTraining {
        model: kept.unwrap_or(model),
        initial_loss,
        epochs,
        best_epoch,
        train_indices: train_idx,
        heldout_indices: held_idx,
    })
}

/// One text per record by greedy decoding.
pub fn reconstruct(model: &AttackModel, records: &[ActivationRecord], vocab: &Vocab) -> Result<Vec<String>> {
    records
        .iter()
        .map(|r| {
            let ids = decode_greedy(model, &r.tensor, r.tensor.rows())?;
            vocab.decode(&ids)
        })
        .collect()
}

/// Reconstruction output line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconstructionLine {
    pub record_id: usize,
    pub iteration: u64,
    pub text: String,
}

pub fn reconstruction_lines(records: &[ActivationRecord], texts: &[String]) -> Vec<ReconstructionLine> {
    records
        .iter()
        .zip(texts)
        .enumerate()
        .map(|(record_id, (r, t))| ReconstructionLine {
            record_id,
            iteration: r.iteration,
            text: t.clone(),
        })
        .collect()
}
