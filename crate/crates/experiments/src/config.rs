use std::path::{Path, PathBuf};

use aia_core::model::{Architecture, AttackModelConfig, ModelConfig};
use aia_core::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ExpError, ExpResult};

/// Metric names accepted in `[metrics] names`.
pub const METRIC_NAMES: [&str; 9] = ["ppl", "rouge1", "rouge2", "rougeL", "bleu1", "bleu2", "bleu4", "cos", "asr"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub architecture: Architecture,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            architecture: Architecture::B,
            n_layers: 12,
            d_model: 32,
            n_heads: 4,
            d_ff: 64,
            max_seq_len: 64,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            vocab_size,
            max_seq_len: self.max_seq_len,
            architecture: self.architecture,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorporaSection {
    /// Plain-text file, documents separated by blank lines. Unset means the
    /// bundled public corpus.
    pub public: Option<PathBuf>,
    pub victim: Option<PathBuf>,
    /// Use only the first N documents (0 keeps all).
    pub public_documents: usize,
    pub victim_documents: usize,
    /// Share of public documents kept away from pre-training and the shadow
    /// dataset, for held-out inversion scores.
    pub heldout_fraction: f64,
    pub pii_records: usize,
}

impl Default for CorporaSection {
    fn default() -> Self {
        CorporaSection {
            public: None,
            victim: None,
            public_documents: 240,
            victim_documents: 40,
            heldout_fraction: 0.1,
            pii_records: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
}

fn pretrain_default() -> TrainSection {
    TrainSection {
        epochs: 3,
        learning_rate: 3e-3,
    }
}

impl Default for TrainSection {
    /// Fine-tuning defaults.
    fn default() -> Self {
        TrainSection {
            epochs: 5,
            learning_rate: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub n_layers: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub holdout_fraction: f64,
    pub patience: usize,
    /// Public documents run through the shadow model (0 keeps all).
    pub shadow_documents: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            n_layers: 12,
            max_epochs: 20,
            learning_rate: 1e-3,
            batch_size: 8,
            holdout_fraction: 0.1,
            patience: 3,
            shadow_documents: 0,
        }
    }
}

impl AttackSection {
    pub fn train_config(&self) -> aia_core::attack::AttackTrainConfig {
        aia_core::attack::AttackTrainConfig {
            max_epochs: self.max_epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            holdout_fraction: self.holdout_fraction,
            patience: self.patience,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub targets: Vec<String>,
    pub spt_epochs: usize,
    pub spt_learning_rate: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            targets: vec!["email".into()],
            spt_epochs: 5,
            spt_learning_rate: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    /// Decoder layers of every attack model in the architecture sweep.
    pub attack_layers: usize,
    /// Victim widths for the model-size sweep.
    pub model_sizes: Vec<usize>,
    /// Attack-model epochs inside sweeps.
    pub max_epochs: usize,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            attack_layers: 6,
            model_sizes: vec![16, 32, 48],
            max_epochs: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub names: Vec<String>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            names: METRIC_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub init: u64,
    pub data: u64,
    pub attack: u64,
    pub pii: u64,
}

impl Seeds {
    pub fn from_base(base: u64) -> Self {
        Seeds {
            init: base,
            data: base.wrapping_add(1),
            attack: base.wrapping_add(2),
            pii: base.wrapping_add(3),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::from_base(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub corpora: CorporaSection,
    #[serde(default = "pretrain_default")]
    pub pretrain: TrainSection,
    #[serde(default)]
    pub finetune: TrainSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub baselines: BaselineSection,
    #[serde(default)]
    pub ablation: AblationSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelSection::default(),
            pipeline: PipelineConfig::default(),
            corpora: CorporaSection::default(),
            pretrain: pretrain_default(),
            finetune: TrainSection::default(),
            attack: AttackSection::default(),
            baselines: BaselineSection::default(),
            ablation: AblationSection::default(),
            metrics: MetricsSection::default(),
            seeds: Seeds::default(),
            out_dir: default_out(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> ExpResult<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ExpError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Parses `path`; relative corpus and output paths resolve against its
    /// directory.
    pub fn load(path: &Path) -> ExpResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExpError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.corpora.public, &mut cfg.corpora.victim].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> ExpResult<()> {
        let bad = |m: String| Err(ExpError::Config(m));
        let cfg = self.model.model_config(8);
        cfg.validate().map_err(|e| ExpError::Config(e.to_string()))?;
        AttackModelConfig::matching(&cfg, self.attack.n_layers)
            .validate()
            .map_err(|e| ExpError::Config(format!("attack model: {e}")))?;
        self.pipeline
            .validate()
            .map_err(|e| ExpError::Config(e.to_string()))?;
        if self.pipeline.stages > self.model.n_layers {
            return bad(format!("{} stages for {} layers", self.pipeline.stages, self.model.n_layers));
        }
        for p in [&self.corpora.public, &self.corpora.victim].into_iter().flatten() {
            if !p.is_file() {
                return bad(format!("corpus file {} does not exist", p.display()));
            }
        }
        if let (Some(a), Some(b)) = (&self.corpora.public, &self.corpora.victim) {
            let same = match (a.canonicalize(), b.canonicalize()) {
                (Ok(x), Ok(y)) => x == y,
                _ => a == b,
            };
            if same {
                return bad("public and victim corpora are the same file".into());
            }
        }
        if !(0.0..1.0).contains(&self.corpora.heldout_fraction) {
            return bad(format!("heldout_fraction {} outside [0, 1)", self.corpora.heldout_fraction));
        }
        if self.corpora.pii_records == 0 {
            return bad("pii_records must be positive".into());
        }
        if self.pretrain.learning_rate < 0.0 || self.finetune.learning_rate < 0.0 {
            return bad("learning rates must be non-negative".into());
        }
        if self.attack.batch_size == 0 || !(0.0..1.0).contains(&self.attack.holdout_fraction) {
            return bad("attack batch_size must be positive and holdout_fraction in [0, 1)".into());
        }
        if self.ablation.attack_layers == 0 || self.ablation.model_sizes.is_empty() {
            return bad("ablation needs attack_layers > 0 and at least one model size".into());
        }
        for t in &self.baselines.targets {
            crate::parse_target(t)?;
        }
        for m in &self.metrics.names {
            if !METRIC_NAMES.contains(&m.as_str()) {
                return bad(format!("unknown metric '{m}'"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.pipeline.stages, 6);
        assert_eq!(c.pipeline.attacker_stage, 3);
        assert_eq!(c.finetune.epochs, 5);
        assert_eq!(c.attack.n_layers, 12);
        assert_eq!(c.ablation.attack_layers, 6);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("[model]\nd_modle = 4\n").is_err());
        assert!(ExperimentConfig::from_toml("colour = 1\n").is_err());
    }

    #[test]
    fn round_trips_and_hash_tracks_content() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.seeds.init += 1;
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = ExperimentConfig::default();
        c.corpora.public = Some("/definitely/missing.txt".into());
        assert!(matches!(c.validate(), Err(ExpError::Config(_))));
        let mut c = ExperimentConfig::default();
        c.pipeline.attacker_stage = 1;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.metrics.names.push("meteor".into());
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.baselines.targets = vec!["name".into()];
        assert!(c.validate().is_err());
    }

    #[test]
    fn same_corpus_for_both_roles_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        std::fs::write(&p, "some text\n").unwrap();
        let mut c = ExperimentConfig::default();
        c.corpora.public = Some(p.clone());
        c.corpora.victim = Some(dir.path().join(".").join("c.txt"));
        assert!(c.validate().is_err());
    }
}
