use aia_core::attack::reconstruct;
use aia_core::metrics::rouge_n;
use aia_core::model::{AttackModel, Module, TransformerModel};
use aia_core::pipeline::{ActivationTap, PipelineConfig};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{metric, ExpError, ExpResult, StepContext};
use crate::steps::{self, attack_ppl, Assets, LabelledRecords, VictimRun};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    LayerIndex,
    ModelSize,
    Architecture,
}

impl std::str::FromStr for Axis {
    type Err = ExpError;

    fn from_str(s: &str) -> ExpResult<Self> {
        match s {
            "layer_index" | "layer-index" => Ok(Axis::LayerIndex),
            "model_size" | "model-size" => Ok(Axis::ModelSize),
            "architecture" => Ok(Axis::Architecture),
            _ => Err(ExpError::Config(format!(
                "unknown ablation axis '{s}' (layer_index, model_size, architecture)"
            ))),
        }
    }
}

fn mean_rouge1(attack: &AttackModel, data: &LabelledRecords, vocab: &aia_core::data::Vocab) -> ExpResult<f64> {
    let cands = reconstruct(attack, &data.records, vocab).step("reconstruct")?;
    let mut sum = 0.0;
    for (c, l) in cands.iter().zip(&data.labels) {
        sum += metric(rouge_n(c, &vocab.decode(l).step("decode")?, 1))?;
    }
    Ok(sum / cands.len().max(1) as f64)
}

fn all_records(run: &VictimRun) -> ExpResult<LabelledRecords> {
    let recs: Vec<_> = run.outcome.records.iter().collect();
    LabelledRecords::from_victim(run, &recs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerIndexRow {
    pub attacker_stage: usize,
    pub layer_cut: usize,
    pub shadow_ppl: f64,
    pub victim_ppl: f64,
    pub victim_rouge1: f64,
}

/// Moves the curious stage over every valid position `2..=K`. Each point
/// reruns the (passive, deterministic) fine-tune with the tap at that stage
/// and trains its own attack model.
pub fn layer_index_sweep(cfg: &ExperimentConfig, assets: &Assets, pre: &TransformerModel) -> ExpResult<Vec<LayerIndexRow>> {
    let mut rows = Vec::new();
    for stage in 2..=cfg.pipeline.stages {
        let pipeline = PipelineConfig {
            attacker_stage: stage,
            ..cfg.pipeline.clone()
        };
        let run = steps::finetune(cfg, &pipeline, pre, &assets.victim, &assets.vocab, Some(ActivationTap::in_memory()))?;
        let attacker = steps::train_attacker(
            cfg,
            assets,
            pre,
            run.layer_cut,
            cfg.ablation.attack_layers,
            cfg.ablation.max_epochs,
        )?;
        let model = &attacker.training.model;
        let held = LabelledRecords::from_model(pre, &assets.public_heldout, &assets.vocab, run.layer_cut)?;
        let victim = all_records(&run)?;
        rows.push(LayerIndexRow {
            attacker_stage: stage,
            layer_cut: run.layer_cut,
            shadow_ppl: attack_ppl(model, &held)?,
            victim_ppl: attack_ppl(model, &victim)?,
            victim_rouge1: mean_rouge1(model, &victim, &assets.vocab)?,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureRow {
    pub architecture: String,
    pub matched: bool,
    pub shadow_ppl: f64,
    pub victim_ppl: f64,
}

/// For each architecture tag the attacker pre-trains a shadow model of that
/// architecture (or reuses `pre` when the tag matches), trains an attack
/// model of that architecture on it, and scores it on its own held-out
/// shadow activations and on the victim's recorded activations.
pub fn architecture_sweep(
    cfg: &ExperimentConfig,
    assets: &Assets,
    pre: &TransformerModel,
    run: &VictimRun,
) -> ExpResult<Vec<ArchitectureRow>> {
    let victim = all_records(run)?;
    let mut rows = Vec::new();
    for arch in aia_core::model::Architecture::ALL {
        let shadow = if arch == pre.config.architecture {
            pre.clone()
        } else {
            let mut mc = pre.config.clone();
            mc.architecture = arch;
            steps::pretrain(cfg, assets, &mc)?.model
        };
        let attacker = steps::train_attacker(
            cfg,
            assets,
            &shadow,
            run.layer_cut,
            cfg.ablation.attack_layers,
            cfg.ablation.max_epochs,
        )?;
        let held = LabelledRecords::from_model(&shadow, &assets.public_heldout, &assets.vocab, run.layer_cut)?;
        rows.push(ArchitectureRow {
            architecture: arch.tag().into(),
            matched: arch == pre.config.architecture,
            shadow_ppl: attack_ppl(&attacker.training.model, &held)?,
            victim_ppl: attack_ppl(&attacker.training.model, &victim)?,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSizeRow {
    pub d_model: usize,
    pub parameters: usize,
    pub shadow_ppl: f64,
    pub victim_ppl: f64,
    pub victim_rouge1: f64,
}

/// Full chain (pre-train, fine-tune, attack) at each configured width.
pub fn model_size_sweep(cfg: &ExperimentConfig, assets: &Assets) -> ExpResult<Vec<ModelSizeRow>> {
    let mut rows = Vec::new();
    for &d in &cfg.ablation.model_sizes {
        let mut section = cfg.model.clone();
        section.d_model = d;
        section.d_ff = d * cfg.model.d_ff / cfg.model.d_model.max(1);
        let mc = steps::model_config(&section, &assets.vocab);
        mc.validate().map_err(|e| ExpError::Config(format!("model size {d}: {e}")))?;
        let pre = steps::pretrain(cfg, assets, &mc)?.model;
        let run = steps::finetune(cfg, &cfg.pipeline, &pre, &assets.victim, &assets.vocab, Some(ActivationTap::in_memory()))?;
        let attacker = steps::train_attacker(
            cfg,
            assets,
            &pre,
            run.layer_cut,
            cfg.ablation.attack_layers,
            cfg.ablation.max_epochs,
        )?;
        let model = &attacker.training.model;
        let held = LabelledRecords::from_model(&pre, &assets.public_heldout, &assets.vocab, run.layer_cut)?;
        let victim = all_records(&run)?;
        rows.push(ModelSizeRow {
            d_model: d,
            parameters: pre.num_params(),
            shadow_ppl: attack_ppl(model, &held)?,
            victim_ppl: attack_ppl(model, &victim)?,
            victim_rouge1: mean_rouge1(model, &victim, &assets.vocab)?,
        });
    }
    Ok(rows)
}

/// Monotone non-decreasing allowing at most `inversions` strict drops.
pub fn nondecreasing_with_inversions(values: &[f64], inversions: usize) -> bool {
    values.windows(2).filter(|w| w[1] < w[0]).count() <= inversions
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_names() {
        assert_eq!("layer_index".parse::<Axis>().unwrap(), Axis::LayerIndex);
        assert_eq!("architecture".parse::<Axis>().unwrap(), Axis::Architecture);
        assert!(matches!("depth".parse::<Axis>(), Err(ExpError::Config(_))));
    }

    #[test]
    fn inversion_counting() {
        assert!(nondecreasing_with_inversions(&[1.0, 2.0, 2.0, 3.0], 0));
        assert!(nondecreasing_with_inversions(&[1.0, 3.0, 2.0, 4.0], 1));
        assert!(!nondecreasing_with_inversions(&[3.0, 2.0, 1.0], 1));
    }
}
