//! The CLI verbs. Each reads what earlier verbs left in `out_dir`, writes
//! its own artifacts there, and returns its report.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use aia_core::attack::{load_shadow_dataset, save_shadow_dataset, SptConfig};
use aia_core::data::PiiType;
use aia_core::metrics::MetricReport;
use aia_core::model::{load_attack_model, load_model, save_attack_model, save_model, AttackModel, TransformerModel};
use aia_core::pipeline::{log_to_json_lines, read_activation_dump, ActivationTap, TrainingData, TrainingOutcome};
use serde::{Deserialize, Serialize};

use crate::ablation::{self, Axis};
use crate::config::ExperimentConfig;
use crate::error::{ExpError, ExpResult, StepContext};
use crate::pii::{compare_methods, AsrTable};
use crate::steps::{self, Assets, InversionScores, LabelledRecords, VictimRun};
use crate::Provenance;

pub const PRE_CKPT: &str = "pre.ckpt";
pub const VICTIM_CKPT: &str = "victim.ckpt";
pub const ATTACK_CKPT: &str = "attack.ckpt";
pub const DUMP: &str = "activations.aiat";
pub const SHADOW_DIR: &str = "shadow";

/// A validated config, its output directory and loaded corpora.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub assets: Assets,
}

impl Run {
    pub fn open(cfg: ExperimentConfig) -> ExpResult<Self> {
        cfg.validate()?;
        fs::create_dir_all(&cfg.out_dir).step("create output directory")?;
        fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml()).step("write config")?;
        let assets = Assets::load(&cfg)?;
        Ok(Run { cfg, assets })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    pub fn provenance(&self, checkpoints: &[(&str, String)]) -> Provenance {
        Provenance {
            config_hash: self.cfg.hash(),
            checkpoints: checkpoints.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> ExpResult<PathBuf> {
        let p = self.path(name);
        let text = serde_json::to_string_pretty(value).expect("reports serialise");
        fs::write(&p, text + "\n").step("write report")?;
        Ok(p)
    }

    pub fn write_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> ExpResult<PathBuf> {
        let p = self.path(name);
        let io = |e: csv::Error| ExpError::Step {
            step: "write csv".into(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(&p).map_err(io)?;
        for r in rows {
            w.serialize(r).map_err(io)?;
        }
        w.flush().step("write csv")?;
        Ok(p)
    }

    fn load_checkpoint(&self, name: &str, made_by: &str) -> ExpResult<TransformerModel> {
        let p = self.path(name);
        if !p.is_file() {
            return Err(ExpError::Config(format!("{} is missing; run `{made_by}` first", p.display())));
        }
        let m = load_model(&p).step("load checkpoint")?;
        if m.config != steps::model_config(&self.cfg.model, &self.assets.vocab) {
            return Err(ExpError::Config(format!("{} was made with a different model config", p.display())));
        }
        Ok(m)
    }

    pub fn load_pre(&self) -> ExpResult<TransformerModel> {
        self.load_checkpoint(PRE_CKPT, "pretrain")
    }

    pub fn load_attack(&self) -> ExpResult<AttackModel> {
        let p = self.path(ATTACK_CKPT);
        if !p.is_file() {
            return Err(ExpError::Config(format!("{} is missing; run `attack` first", p.display())));
        }
        load_attack_model(&p).step("load attack checkpoint")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub provenance: Provenance,
    pub steps: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
}

pub fn cmd_pretrain(run: &Run) -> ExpResult<PretrainReport> {
    let mc = steps::model_config(&run.cfg.model, &run.assets.vocab);
    let pre = steps::pretrain(&run.cfg, &run.assets, &mc)?;
    save_model(&run.path(PRE_CKPT), &pre.model).step("save checkpoint")?;
    fs::write(run.path("pretrain_log.jsonl"), log_to_json_lines(&pre.log)).step("write log")?;
    let report = PretrainReport {
        provenance: run.provenance(&[("pre", pre.model.param_hash())]),
        steps: pre.log.len(),
        initial_loss: pre.log.first().map(|e| e.loss),
        final_loss: pre.log.last().map(|e| e.loss),
    };
    run.write_json("pretrain.json", &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub layer: usize,
    pub mean_cosine: f64,
}

pub fn cmd_similarity(run: &Run) -> ExpResult<Vec<SimilarityRow>> {
    let pre = run.load_pre()?;
    let victim = steps::finetune(&run.cfg, &run.cfg.pipeline, &pre, &run.assets.victim, &run.assets.vocab, None)?;
    let sims = steps::similarity(&pre, &victim.outcome.model, &victim.data)?;
    let rows: Vec<SimilarityRow> = sims
        .into_iter()
        .enumerate()
        .map(|(i, mean_cosine)| SimilarityRow {
            layer: i + 1,
            mean_cosine,
        })
        .collect();
    run.write_csv("similarity.csv", &rows)?;
    run.write_json(
        "similarity.json",
        &serde_json::json!({
            "provenance": run.provenance(&[("pre", pre.param_hash()), ("victim", victim.outcome.model.param_hash())]),
            "rows": rows,
        }),
    )?;
    Ok(rows)
}

/// Metric columns kept by `[metrics] names`.
pub fn select_metrics(report: &MetricReport, names: &[String]) -> BTreeMap<String, f64> {
    let all = [
        ("ppl", report.ppl),
        ("rouge1", report.rouge1),
        ("rouge2", report.rouge2),
        ("rougeL", report.rouge_l),
        ("bleu1", report.bleu1),
        ("bleu2", report.bleu2),
        ("bleu4", report.bleu4),
        ("cos", report.cos),
    ];
    let mut out: BTreeMap<String, f64> = all
        .into_iter()
        .filter(|(k, _)| names.iter().any(|n| n == k))
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    if names.iter().any(|n| n == "asr") {
        out.extend(report.asr.iter().map(|(k, v)| (format!("asr_{k}"), *v)));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionSummary {
    pub records: usize,
    pub metrics: BTreeMap<String, f64>,
    pub shuffled_rouge1: f64,
}

impl InversionSummary {
    fn of(s: &InversionScores, names: &[String]) -> Self {
        InversionSummary {
            records: s.records,
            metrics: select_metrics(&s.report, names),
            shuffled_rouge1: s.shuffled_rouge1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub provenance: Provenance,
    pub layer_cut: usize,
    pub shadow_pairs: usize,
    pub attack_initial_loss: f64,
    pub attack_best_epoch: usize,
    pub victim: InversionSummary,
    pub heldout_public: Option<InversionSummary>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconstructionRow {
    pub record_id: usize,
    pub iteration: u64,
    pub microbatch: u32,
    pub text: String,
    pub reference: String,
}

/// Rebuilds the fine-tune's data and schedule from the config and pairs
/// them with persisted records and the persisted victim checkpoint.
fn victim_from_dump(run: &Run, pre: &TransformerModel) -> ExpResult<VictimRun> {
    let records = read_activation_dump(&run.path(DUMP)).step("read activation dump")?;
    let model = run.load_checkpoint(VICTIM_CKPT, "attack")?;
    let data = TrainingData::from_corpus(&run.assets.victim, &run.assets.vocab, pre.config.max_seq_len);
    let schedule = steps::victim_schedule(&run.cfg, &data);
    Ok(VictimRun {
        outcome: TrainingOutcome {
            model,
            log: Vec::new(),
            records,
        },
        data,
        schedule,
        layer_cut: steps::layer_cut(&pre.config, &run.cfg.pipeline)?,
    })
}

/// Full chain: tapped fine-tune, shadow dataset, attack training,
/// reconstruction, scoring. With `from_dump` the fine-tune is skipped and
/// the persisted activation dump and victim checkpoint are used instead.
pub fn cmd_attack(run: &Run, from_dump: bool) -> ExpResult<AttackReport> {
    let cfg = &run.cfg;
    let pre = run.load_pre()?;
    let victim = if from_dump {
        victim_from_dump(run, &pre)?
    } else {
        let tap = ActivationTap::with_dump(&run.path(DUMP), true).step("open activation dump")?;
        let v = steps::finetune(cfg, &cfg.pipeline, &pre, &run.assets.victim, &run.assets.vocab, Some(tap))?;
        save_model(&run.path(VICTIM_CKPT), &v.outcome.model).step("save victim")?;
        fs::write(run.path("finetune_log.jsonl"), log_to_json_lines(&v.outcome.log)).step("write log")?;
        v
    };
    let cached = load_shadow_dataset(&run.path(SHADOW_DIR))
        .ok()
        .filter(|ds| from_dump && ds.fingerprint.param_hash == pre.param_hash() && ds.layer_cut == victim.layer_cut);
    let attacker = match cached {
        Some(ds) => steps::fit_attacker(cfg, ds, cfg.attack.n_layers, cfg.attack.max_epochs)?,
        None => {
            let a = steps::train_attacker(cfg, &run.assets, &pre, victim.layer_cut, cfg.attack.n_layers, cfg.attack.max_epochs)?;
            save_shadow_dataset(&run.path(SHADOW_DIR), &a.shadow).step("save shadow dataset")?;
            a
        }
    };
    let attack = &attacker.training.model;
    save_attack_model(&run.path(ATTACK_CKPT), attack).step("save attack model")?;
    run.write_json("attack_training.json", &attacker.training.epochs)?;

    let all: Vec<_> = victim.outcome.records.iter().collect();
    let data = LabelledRecords::from_victim(&victim, &all)?;
    let scores = steps::score_inversion(attack, &pre, &data, &run.assets.vocab)?;
    let lines: String = data
        .records
        .iter()
        .zip(scores.candidates.iter().zip(&scores.references))
        .enumerate()
        .map(|(record_id, (r, (text, reference)))| {
            let row = ReconstructionRow {
                record_id,
                iteration: r.iteration,
                microbatch: r.microbatch,
                text: text.clone(),
                reference: reference.clone(),
            };
            serde_json::to_string(&row).expect("rows serialise") + "\n"
        })
        .collect();
    fs::write(run.path("reconstructions.jsonl"), lines).step("write reconstructions")?;

    let heldout_public = if run.assets.public_heldout.is_empty() {
        None
    } else {
        let held = LabelledRecords::from_model(&pre, &run.assets.public_heldout, &run.assets.vocab, victim.layer_cut)?;
        let s = steps::score_inversion(attack, &pre, &held, &run.assets.vocab)?;
        Some(InversionSummary::of(&s, &cfg.metrics.names))
    };
    let report = AttackReport {
        provenance: run.provenance(&[
            ("pre", pre.param_hash()),
            ("victim", victim.outcome.model.param_hash()),
            ("attack", attack.param_hash()),
        ]),
        layer_cut: victim.layer_cut,
        shadow_pairs: attacker.shadow.len(),
        attack_initial_loss: attacker.training.initial_loss,
        attack_best_epoch: attacker.training.best_epoch,
        victim: InversionSummary::of(&scores, &cfg.metrics.names),
        heldout_public,
    };
    run.write_json("attack_report.json", &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub provenance: Provenance,
    pub table: AsrTable,
}

/// Fine-tunes the victim on the PII documents with the tap on, then scores
/// True-Prefix, SPT and the attack model from `attack` on the same victim.
pub fn cmd_baselines(run: &Run, targets: &[PiiType]) -> ExpResult<BaselineReport> {
    let cfg = &run.cfg;
    let pre = run.load_pre()?;
    let attack = run.load_attack()?;
    let corpus = steps::pii_corpus(&run.assets.pii)?;
    let victim = steps::finetune(cfg, &cfg.pipeline, &pre, &corpus, &run.assets.vocab, Some(ActivationTap::in_memory()))?;
    save_model(&run.path("pii_victim.ckpt"), &victim.outcome.model).step("save PII victim")?;
    let spt = SptConfig {
        epochs: cfg.baselines.spt_epochs,
        learning_rate: cfg.baselines.spt_learning_rate,
        seed: cfg.seeds.attack,
    };
    let table = compare_methods(
        &victim.outcome.model,
        &attack,
        &victim,
        &run.assets.pii,
        targets,
        &run.assets.vocab,
        &spt,
    )?;
    let report = BaselineReport {
        provenance: run.provenance(&[
            ("pre", pre.param_hash()),
            ("pii_victim", victim.outcome.model.param_hash()),
            ("attack", attack.param_hash()),
        ]),
        table,
    };
    run.write_json("baselines.json", &report)?;
    Ok(report)
}

/// Writes `ablation_<axis>.csv` and a JSON copy with provenance.
pub fn cmd_ablate(run: &Run, axis: Axis) -> ExpResult<PathBuf> {
    let cfg = &run.cfg;
    let (name, path, json) = match axis {
        Axis::LayerIndex => {
            let pre = run.load_pre()?;
            let rows = ablation::layer_index_sweep(cfg, &run.assets, &pre)?;
            let p = run.write_csv("ablation_layer_index.csv", &rows)?;
            ("layer_index", p, serde_json::json!({"provenance": run.provenance(&[("pre", pre.param_hash())]), "rows": rows}))
        }
        Axis::Architecture => {
            let pre = run.load_pre()?;
            let victim = steps::finetune(cfg, &cfg.pipeline, &pre, &run.assets.victim, &run.assets.vocab, Some(ActivationTap::in_memory()))?;
            let rows = ablation::architecture_sweep(cfg, &run.assets, &pre, &victim)?;
            let p = run.write_csv("ablation_architecture.csv", &rows)?;
            let prov = run.provenance(&[("pre", pre.param_hash()), ("victim", victim.outcome.model.param_hash())]);
            ("architecture", p, serde_json::json!({"provenance": prov, "rows": rows}))
        }
        Axis::ModelSize => {
            let rows = ablation::model_size_sweep(cfg, &run.assets)?;
            let p = run.write_csv("ablation_model_size.csv", &rows)?;
            ("model_size", p, serde_json::json!({"provenance": run.provenance(&[]), "rows": rows}))
        }
    };
    run.write_json(&format!("ablation_{name}.json"), &json)?;
    Ok(path)
}

/// Re-scores persisted artifacts (victim dump, victim and attack
/// checkpoints) without training anything.
pub fn cmd_evaluate(run: &Run) -> ExpResult<InversionSummary> {
    let pre = run.load_pre()?;
    let attack = run.load_attack()?;
    let victim = victim_from_dump(run, &pre)?;
    let all: Vec<_> = victim.outcome.records.iter().collect();
    let data = LabelledRecords::from_victim(&victim, &all)?;
    let scores = steps::score_inversion(&attack, &pre, &data, &run.assets.vocab)?;
    let summary = InversionSummary::of(&scores, &run.cfg.metrics.names);
    run.write_json(
        "evaluate.json",
        &serde_json::json!({
            "provenance": run.provenance(&[
                ("pre", pre.param_hash()),
                ("victim", victim.outcome.model.param_hash()),
                ("attack", attack.param_hash()),
            ]),
            "victim": summary,
        }),
    )?;
    Ok(summary)
}
