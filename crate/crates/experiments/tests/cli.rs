//! End-to-end runs of the `aia` binary on a tiny configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aia_core::model::TransformerModel;
use aia_experiments::steps::{self, Assets};
use aia_experiments::ExperimentConfig;
use serde_json::Value;

const TINY: &str = r#"
[model]
architecture = "arch-B"
n_layers = 6
d_model = 8
n_heads = 2
d_ff = 16
max_seq_len = 64

[pipeline]
stages = 6
attacker_stage = 3
microbatches = 2
deterministic = true

[corpora]
public_documents = 12
victim_documents = 3
heldout_fraction = 0.25
pii_records = 66

[pretrain]
epochs = 1
learning_rate = 3e-3

[finetune]
epochs = 1
learning_rate = 1e-4

[attack]
n_layers = 1
max_epochs = 1
batch_size = 16

[baselines]
spt_epochs = 1

[ablation]
attack_layers = 1
model_sizes = [8]
max_epochs = 1
"#;

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("tiny.toml");
    fs::write(&p, format!("out_dir = \"out\"\n{TINY}{extra}")).unwrap();
    p
}

fn aia(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aia"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("spawn aia")
}

fn ok(out: Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "\n[attack_extra]\nx = 1\n");
    let out = aia(&cfg, &["pretrain"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("attack_extra"));
}

#[test]
fn missing_checkpoint_and_bad_axis_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = aia(&cfg, &["attack"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pretrain"));
    assert_eq!(aia(&cfg, &["ablate", "depth"]).status.code(), Some(2));
    assert_eq!(aia(&cfg, &["baselines", "--targets", "name"]).status.code(), Some(2));
}

#[test]
fn pretrain_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let hash = |seed: &str, out: &str| {
        let o = dir.path().join(out);
        ok(aia(&cfg, &["--seed", seed, "--out", o.to_str().unwrap(), "pretrain"]));
        let r = read_json(&o.join("pretrain.json"));
        assert!(r["final_loss"].as_f64().unwrap() < r["initial_loss"].as_f64().unwrap());
        r["provenance"]["checkpoints"]["pre"].as_str().unwrap().to_string()
    };
    let a = hash("5", "a");
    assert_eq!(a, hash("5", "b"));
    assert_ne!(a, hash("6", "c"));
}

#[test]
fn zero_epoch_pretrain_keeps_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "");
    let text = fs::read_to_string(&path).unwrap().replacen("epochs = 1", "epochs = 0", 1);
    fs::write(&path, text).unwrap();
    let report = ok(aia(&path, &["pretrain"]));
    assert_eq!(report["steps"], 0);
    let cfg = ExperimentConfig::load(&path).unwrap();
    let assets = Assets::load(&cfg).unwrap();
    let init = TransformerModel::init(steps::model_config(&cfg.model, &assets.vocab), cfg.seeds.init).unwrap();
    assert_eq!(report["provenance"]["checkpoints"]["pre"], init.param_hash());
}

#[test]
fn full_chain_persists_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("out");
    ok(aia(&cfg, &["pretrain"]));

    let sims = ok(aia(&cfg, &["similarity"]));
    let sims = sims.as_array().unwrap();
    assert_eq!(sims.len(), 6);
    for r in sims {
        assert!((-1.0..=1.0).contains(&r["mean_cosine"].as_f64().unwrap()));
    }
    assert!(out.join("similarity.csv").is_file());

    let report = ok(aia(&cfg, &["attack"]));
    assert_eq!(report["layer_cut"], 2);
    for m in ["ppl", "rouge1", "rouge2", "rougeL", "bleu1", "bleu2", "bleu4", "cos"] {
        assert!(report["victim"]["metrics"][m].is_number(), "missing {m}");
    }
    for f in ["victim.ckpt", "attack.ckpt", "activations.aiat", "attack_training.json", "finetune_log.jsonl"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let first = fs::read_to_string(out.join("reconstructions.jsonl")).unwrap();
    assert_eq!(first.lines().count(), report["victim"]["records"].as_u64().unwrap() as usize);
    let row: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    for k in ["record_id", "iteration", "text"] {
        assert!(!row[k].is_null(), "row lacks {k}");
    }

    ok(aia(&cfg, &["attack", "--from-dump"]));
    assert_eq!(fs::read_to_string(out.join("reconstructions.jsonl")).unwrap(), first);

    let eval = ok(aia(&cfg, &["evaluate"]));
    assert_eq!(eval["metrics"], report["victim"]["metrics"]);

    let table = ok(aia(&cfg, &["baselines", "--targets", "email,phone"]));
    let rows = table["table"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert_eq!(r["asr"].as_object().unwrap().len(), 2);
    }
    assert_eq!(table["table"]["evaluated_records"], 2);

    let ablate = aia(&cfg, &["ablate", "layer_index"]);
    assert!(ablate.status.success(), "{}", String::from_utf8_lossy(&ablate.stderr));
    let rows = fs::read_to_string(out.join("ablation_layer_index.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 5);
}
