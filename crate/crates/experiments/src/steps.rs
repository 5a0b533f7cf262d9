//! Building blocks shared by the CLI verbs and the acceptance suite. Each
//! returns in-memory values; persistence lives in `commands`.

use aia_core::attack::{build_shadow_dataset, reconstruct, train_attack_model, AttackTraining, ShadowDataset};
use aia_core::data::{build_vocab, bundled_public, bundled_victim, split_corpus, Corpus, CorpusRole, PiiRecord, Vocab};
use aia_core::metrics::{perplexity, rouge_n, MetricReport};
use aia_core::model::{AttackModel, AttackModelConfig, ModelConfig, TransformerModel};
use aia_core::optim::AdamWConfig;
use aia_core::pipeline::{
    activation_similarity_study, build_schedule, partition_model, record_chunk, train_monolithic, ActivationRecord,
    ActivationTap, LogEntry, Pipeline, PipelineConfig, ScheduledStep, TrainingData, TrainingOutcome,
};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ModelSection};
use crate::error::{metric, ExpError, ExpResult, StepContext};

/// Corpora, PII records and the shared character vocabulary.
#[derive(Clone, Debug)]
pub struct Assets {
    pub vocab: Vocab,
    pub public_train: Corpus,
    pub public_heldout: Corpus,
    pub victim: Corpus,
    pub pii: Vec<PiiRecord>,
}

fn load_corpus(path: &Option<std::path::PathBuf>, role: CorpusRole, keep: usize) -> ExpResult<Corpus> {
    let c = match path {
        Some(p) => Corpus::load(p, role).map_err(|e| ExpError::Config(format!("{}: {e}", p.display())))?,
        None if role == CorpusRole::Public => bundled_public(),
        None => bundled_victim(),
    };
    if keep == 0 || keep >= c.len() {
        return Ok(c);
    }
    c.take(keep).step("load corpora")
}

impl Assets {
    pub fn load(cfg: &ExperimentConfig) -> ExpResult<Self> {
        let public = load_corpus(&cfg.corpora.public, CorpusRole::Public, cfg.corpora.public_documents)?;
        let victim = load_corpus(&cfg.corpora.victim, CorpusRole::Victim, cfg.corpora.victim_documents)?;
        aia_core::data::ensure_disjoint(&public, &victim).map_err(|e| ExpError::Config(e.to_string()))?;
        let pii = aia_core::data::generate_pii_dataset(cfg.corpora.pii_records, cfg.seeds.pii).step("generate PII")?;
        let pii_corpus = pii_corpus(&pii)?;
        let vocab = build_vocab(&[&public, &victim, &pii_corpus]).step("build vocabulary")?;
        let h = cfg.corpora.heldout_fraction;
        let (public_train, public_heldout) = if h > 0.0 {
            let mut parts = split_corpus(&public, &[1.0 - h, h], cfg.seeds.data).step("split public corpus")?;
            let held = parts.pop().expect("two parts");
            (parts.pop().expect("two parts"), held)
        } else {
            (public.clone(), public.take(0).step("split public corpus")?)
        };
        Ok(Assets {
            vocab,
            public_train,
            public_heldout,
            victim,
            pii,
        })
    }
}

/// One document per PII record.
pub fn pii_corpus(records: &[PiiRecord]) -> ExpResult<Corpus> {
    Corpus::new("pii", CorpusRole::Victim, records.iter().map(|r| r.rendered.clone()).collect()).step("PII corpus")
}

pub fn model_config(section: &ModelSection, vocab: &Vocab) -> ModelConfig {
    section.model_config(vocab.size())
}

/// Number of blocks in front of the curious stage.
pub fn layer_cut(model: &ModelConfig, pipeline: &PipelineConfig) -> ExpResult<usize> {
    pipeline.validate().map_err(|e| ExpError::Config(e.to_string()))?;
    let specs = partition_model(model, pipeline.stages).map_err(|e| ExpError::Config(e.to_string()))?;
    Ok(pipeline.layer_cut(&specs))
}

#[derive(Clone, Debug)]
pub struct Pretrained {
    pub model: TransformerModel,
    pub log: Vec<LogEntry>,
}

/// Trains a fresh model of shape `model` on the public training split.
pub fn pretrain(cfg: &ExperimentConfig, assets: &Assets, model: &ModelConfig) -> ExpResult<Pretrained> {
    let init = TransformerModel::init(model.clone(), cfg.seeds.init).map_err(|e| ExpError::Config(e.to_string()))?;
    let data = TrainingData::from_corpus(&assets.public_train, &assets.vocab, model.max_seq_len);
    let schedule = build_schedule(data.len(), cfg.pipeline.microbatches, cfg.pretrain.epochs, cfg.seeds.data);
    let (model, log) = train_monolithic(init, &data, &schedule, AdamWConfig::with_lr(cfg.pretrain.learning_rate))
        .step("pretrain")?;
    Ok(Pretrained { model, log })
}

/// A pipeline fine-tuning run with everything needed to map tapped records
/// back to their text.
#[derive(Clone, Debug)]
pub struct VictimRun {
    pub outcome: TrainingOutcome,
    pub data: TrainingData,
    pub schedule: Vec<ScheduledStep>,
    pub layer_cut: usize,
}

impl VictimRun {
    /// Token ids behind a tapped record (the chunk's inputs).
    pub fn labels(&self, record: &ActivationRecord) -> ExpResult<Vec<usize>> {
        let c = record_chunk(&self.schedule, record).ok_or_else(|| ExpError::Step {
            step: "map records".into(),
            message: format!("record ({}, {}) is not in the schedule", record.iteration, record.microbatch),
        })?;
        let chunk = &self.data.chunks[c];
        Ok(chunk[..chunk.len() - 1].to_vec())
    }

    /// Records of the first epoch; together they cover every chunk once.
    pub fn first_epoch(&self) -> Vec<&ActivationRecord> {
        self.outcome
            .records
            .iter()
            .filter(|r| self.schedule.get(r.iteration as usize).is_some_and(|s| s.epoch == 0))
            .collect()
    }
}

pub fn victim_schedule(cfg: &ExperimentConfig, data: &TrainingData) -> Vec<ScheduledStep> {
    build_schedule(
        data.len(),
        cfg.pipeline.microbatches,
        cfg.finetune.epochs,
        cfg.seeds.data.wrapping_add(1000),
    )
}

/// Fine-tunes a copy of `pre` on `corpus` through the pipeline with the
/// curious stage recording (or not, with `tap = None`).
pub fn finetune(
    cfg: &ExperimentConfig,
    pipeline: &PipelineConfig,
    pre: &TransformerModel,
    corpus: &Corpus,
    vocab: &Vocab,
    tap: Option<ActivationTap>,
) -> ExpResult<VictimRun> {
    let data = TrainingData::from_corpus(corpus, vocab, pre.config.max_seq_len);
    let schedule = victim_schedule(cfg, &data);
    let layer_cut = layer_cut(&pre.config, pipeline)?;
    let mut p = Pipeline::new(pipeline.clone(), AdamWConfig::with_lr(cfg.finetune.learning_rate))
        .map_err(|e| ExpError::Config(e.to_string()))?;
    if let Some(t) = tap {
        p = p.with_tap(t);
    }
    let outcome = p.run(pre.clone(), &data, &schedule).step("finetune")?;
    Ok(VictimRun {
        outcome,
        data,
        schedule,
        layer_cut,
    })
}

/// Mean activation cosine per layer between `pre` and `fine` on up to 20
/// chunks of `probes`.
pub fn similarity(pre: &TransformerModel, fine: &TransformerModel, probes: &TrainingData) -> ExpResult<Vec<f64>> {
    let p: Vec<Vec<usize>> = probes.chunks.iter().take(20).map(|c| c[..c.len() - 1].to_vec()).collect();
    metric(activation_similarity_study(pre, fine, &p))
}

#[derive(Clone, Debug)]
pub struct Attacker {
    pub shadow: ShadowDataset,
    pub training: AttackTraining,
}

/// Builds the shadow dataset from `shadow_model` at `cut` and trains an
/// attack model with `n_layers` decoder layers of the shadow model's
/// architecture.
pub fn train_attacker(
    cfg: &ExperimentConfig,
    assets: &Assets,
    shadow_model: &TransformerModel,
    cut: usize,
    n_layers: usize,
    max_epochs: usize,
) -> ExpResult<Attacker> {
    let docs = match cfg.attack.shadow_documents {
        0 => assets.public_train.clone(),
        n => assets.public_train.take(n).step("shadow dataset")?,
    };
    let shadow = build_shadow_dataset(shadow_model, &docs, &assets.vocab, cut).step("shadow dataset")?;
    fit_attacker(cfg, shadow, n_layers, max_epochs)
}

/// Trains an attack model on an existing shadow dataset.
pub fn fit_attacker(cfg: &ExperimentConfig, shadow: ShadowDataset, n_layers: usize, max_epochs: usize) -> ExpResult<Attacker> {
    let acfg = AttackModelConfig::matching(&shadow.fingerprint.config, n_layers);
    let mut tc = cfg.attack.train_config();
    tc.max_epochs = max_epochs;
    let training = train_attack_model(&shadow, &acfg, &tc, cfg.seeds.attack).step("attack training")?;
    Ok(Attacker { shadow, training })
}

/// Activation records with their true token ids.
#[derive(Clone, Debug, Default)]
pub struct LabelledRecords {
    pub records: Vec<ActivationRecord>,
    pub labels: Vec<Vec<usize>>,
}

impl LabelledRecords {
    pub fn from_victim(run: &VictimRun, records: &[&ActivationRecord]) -> ExpResult<Self> {
        let labels = records.iter().map(|r| run.labels(r)).collect::<ExpResult<_>>()?;
        Ok(LabelledRecords {
            records: records.iter().map(|&r| r.clone()).collect(),
            labels,
        })
    }

    /// Prefix activations of `corpus` windows under `model`, as if tapped.
    pub fn from_model(model: &TransformerModel, corpus: &Corpus, vocab: &Vocab, cut: usize) -> ExpResult<Self> {
        let ds = build_shadow_dataset(model, corpus, vocab, cut).step("held-out activations")?;
        let mut out = LabelledRecords::default();
        for (i, p) in ds.pairs.into_iter().enumerate() {
            out.records.push(ActivationRecord {
                iteration: i as u64,
                microbatch: 0,
                seq_len: p.labels.len() as u32,
                tensor: p.activation,
            });
            out.labels.push(p.labels);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Attack-model perplexity on activations with their true labels.
pub fn attack_ppl(attack: &AttackModel, data: &LabelledRecords) -> ExpResult<f64> {
    let pairs: Vec<(&aia_core::Tensor, &[usize])> = data
        .records
        .iter()
        .zip(&data.labels)
        .map(|(r, l)| (&r.tensor, l.as_slice()))
        .collect();
    metric(perplexity(attack, &pairs))
}

/// Mean ROUGE-1 of candidates scored against references rotated by half
/// the list, so no candidate meets its own reference.
pub fn shuffled_rouge1(candidates: &[String], references: &[String]) -> ExpResult<f64> {
    let n = candidates.len();
    if n < 2 || references.len() != n {
        return Err(ExpError::Metric(format!("shuffled control needs two or more pairs, got {n}")));
    }
    let shift = n / 2;
    let mut sum = 0.0;
    for (i, c) in candidates.iter().enumerate() {
        sum += metric(rouge_n(c, &references[(i + shift) % n], 1))?;
    }
    Ok(sum / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionScores {
    pub records: usize,
    pub report: MetricReport,
    /// ROUGE-1 with mismatched references.
    pub shuffled_rouge1: f64,
    pub candidates: Vec<String>,
    pub references: Vec<String>,
}

/// Reconstructs every record and scores it against its true text. `encoder`
/// is the frozen shadow model used for COS.
pub fn score_inversion(
    attack: &AttackModel,
    encoder: &TransformerModel,
    data: &LabelledRecords,
    vocab: &Vocab,
) -> ExpResult<InversionScores> {
    let candidates = reconstruct(attack, &data.records, vocab).step("reconstruct")?;
    let references = data
        .labels
        .iter()
        .map(|l| vocab.decode(l))
        .collect::<aia_core::Result<Vec<_>>>()
        .step("decode references")?;
    let ppl = attack_ppl(attack, data)?;
    let report = metric(MetricReport::score_texts(&candidates, &references, ppl, encoder, vocab))?;
    let shuffled_rouge1 = shuffled_rouge1(&candidates, &references)?;
    Ok(InversionScores {
        records: data.len(),
        report,
        shuffled_rouge1,
        candidates,
        references,
    })
}
