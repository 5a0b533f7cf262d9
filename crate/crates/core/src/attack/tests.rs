use super::*;
use crate::data::{build_vocab, generate_pii_dataset, Corpus, CorpusRole, PiiType, Vocab};
use crate::model::{AttackModelConfig, Architecture, ModelConfig, TransformerModel};
use crate::optim::AdamWConfig;
use crate::pipeline::{build_schedule, record_chunk, ActivationTap, Pipeline, PipelineConfig, TrainingData};

fn corpus(docs: &[&str]) -> Corpus {
    Corpus::new("toy", CorpusRole::Public, docs.iter().map(|s| s.to_string()).collect()).unwrap()
}

fn toy() -> (Corpus, Vocab, TransformerModel) {
    let c = corpus(&[
        "the quick brown fox jumps over the lazy dog",
        "pack my box with five dozen liquor jugs",
        "sphinx of black quartz judge my vow",
    ]);
    let vocab = build_vocab(&[&c]).unwrap();
    let cfg = ModelConfig {
        n_layers: 4,
        d_model: 16,
        n_heads: 2,
        d_ff: 24,
        vocab_size: vocab.size(),
        max_seq_len: 16,
        architecture: Architecture::B,
    };
    (c, vocab, TransformerModel::init(cfg, 11).unwrap())
}

#[test]
fn shadow_pairs_are_prefix_activations_and_leave_the_model_alone() {
    let (c, vocab, m) = toy();
    let before = m.param_hash();
    let ds = build_shadow_dataset(&m, &c, &vocab, 2).unwrap();
    assert_eq!(m.param_hash(), before);
    assert_eq!(ds.fingerprint.param_hash, before);
    let expect: usize = c
        .documents()
        .iter()
        .map(|d| crate::data::token_windows(&vocab.encode(d), 16).len())
        .sum();
    assert_eq!(ds.len(), expect);
    for p in &ds.pairs {
        assert_eq!(p.activation, m.forward_prefix(&p.labels, 2).unwrap());
        assert_eq!(p.activation.rows(), p.labels.len());
    }
    assert!(build_shadow_dataset(&m, &c, &vocab, 0).is_err());
    assert!(build_shadow_dataset(&m, &c, &vocab, 5).is_err());
}

#[test]
fn shadow_dataset_round_trips_through_disk() {
    let (c, vocab, m) = toy();
    let ds = build_shadow_dataset(&m, &c, &vocab, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_shadow_dataset(dir.path(), &ds).unwrap();
    assert_eq!(load_shadow_dataset(dir.path()).unwrap(), ds);
}

#[test]
fn tapped_activations_before_the_first_update_match_the_shadow_model() {
    let (c, vocab, m) = toy();
    let cfg = PipelineConfig {
        stages: 4,
        attacker_stage: 3,
        microbatches: 2,
        deterministic: true,
    };
    let data = TrainingData::from_corpus(&c, &vocab, m.config.max_seq_len);
    let schedule = build_schedule(data.len(), 2, 1, 3);
    let out = Pipeline::new(cfg.clone(), AdamWConfig::with_lr(1e-3))
        .unwrap()
        .with_tap(ActivationTap::in_memory())
        .run(m.clone(), &data, &schedule)
        .unwrap();
    let cut = cfg.layer_cut(&crate::pipeline::partition_model(&m.config, 4).unwrap());
    let first: Vec<_> = out.records.iter().filter(|r| r.iteration == 0).collect();
    assert_eq!(first.len(), schedule[0].chunks.len());
    for r in first {
        let chunk = &data.chunks[record_chunk(&schedule, r).unwrap()];
        let inputs = &chunk[..chunk.len() - 1];
        assert_eq!(r.tensor, m.forward_prefix(inputs, cut).unwrap());
    }
}

fn attack_cfg(m: &TransformerModel, layers: usize) -> AttackModelConfig {
    AttackModelConfig::matching(&m.config, layers)
}

#[test]
fn fresh_attack_model_starts_near_uniform() {
    let (c, vocab, m) = toy();
    let ds = build_shadow_dataset(&m, &c, &vocab, 2).unwrap();
    let a = crate::model::AttackModel::init(attack_cfg(&m, 2), 4).unwrap();
    let pairs: Vec<_> = ds.pairs.iter().collect();
    let loss = mean_loss(&a, &pairs).unwrap();
    let ln_v = (vocab.size() as f64).ln();
    assert!((loss - ln_v).abs() < 0.1 * ln_v, "{loss} vs {ln_v}");
}

#[test]
fn overfitting_one_pair_reconstructs_its_text() {
    let (_, vocab, m) = toy();
    let one = corpus(&["the lazy fox"]);
    let ds = build_shadow_dataset(&m, &one, &vocab, 2).unwrap();
    assert_eq!(ds.len(), 1);
    let tc = AttackTrainConfig {
        max_epochs: 150,
        learning_rate: 1e-2,
        batch_size: 1,
        holdout_fraction: 0.0,
        patience: 3,
    };
    let t = train_attack_model(&ds, &attack_cfg(&m, 2), &tc, 1).unwrap();
    assert!(t.final_train_loss() < t.initial_loss);
    let rec = crate::pipeline::ActivationRecord {
        iteration: 0,
        microbatch: 0,
        seq_len: ds.pairs[0].labels.len() as u32,
        tensor: ds.pairs[0].activation.clone(),
    };
    let text = reconstruct(&t.model, &[rec], &vocab).unwrap();
    assert_eq!(text, vec![vocab.decode(&ds.pairs[0].labels).unwrap()]);
}

#[test]
fn full_batch_training_ignores_pair_order() {
    let (c, vocab, m) = toy();
    let ds = build_shadow_dataset(&m, &c, &vocab, 1).unwrap();
    let mut rev = ds.clone();
    rev.pairs.reverse();
    let tc = AttackTrainConfig {
        max_epochs: 3,
        learning_rate: 1e-3,
        batch_size: ds.len(),
        holdout_fraction: 0.0,
        patience: 3,
    };
    let a = train_attack_model(&ds, &attack_cfg(&m, 1), &tc, 2).unwrap();
    let b = train_attack_model(&rev, &attack_cfg(&m, 1), &tc, 2).unwrap();
    for p in &ds.pairs {
        let (x, y) = (a.model.forward_attack(&p.activation).unwrap(), b.model.forward_attack(&p.activation).unwrap());
        for (u, v) in x.data().iter().zip(y.data()) {
            assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()), "{u} vs {v}");
        }
    }
}

#[test]
fn holdout_split_is_a_seeded_partition() {
    let (tr, held) = holdout_split(50, 0.1, 9);
    assert_eq!(held.len(), 5);
    let mut all = [tr.clone(), held.clone()].concat();
    all.sort();
    assert_eq!(all, (0..50).collect::<Vec<_>>());
    assert_eq!(holdout_split(50, 0.1, 9), (tr, held));
    assert_eq!(holdout_split(1, 0.5, 0).1.len(), 0);
}

#[test]
fn reconstruction_is_deterministic() {
    let (c, vocab, m) = toy();
    let ds = build_shadow_dataset(&m, &c, &vocab, 2).unwrap();
    let a = crate::model::AttackModel::init(attack_cfg(&m, 1), 4).unwrap();
    assert!(reconstruct(&a, &[], &vocab).unwrap().is_empty());
    let recs: Vec<_> = ds
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| crate::pipeline::ActivationRecord {
            iteration: i as u64,
            microbatch: 0,
            seq_len: p.labels.len() as u32,
            tensor: p.activation.clone(),
        })
        .collect();
    let x = reconstruct(&a, &recs, &vocab).unwrap();
    assert_eq!(x, reconstruct(&a, &recs, &vocab).unwrap());
    let lines = reconstruction_lines(&recs, &x);
    assert_eq!(lines.len(), recs.len());
    assert_eq!(lines[1].iteration, 1);
}

#[test]
fn width_mismatch_is_rejected() {
    let (c, vocab, m) = toy();
    let ds = build_shadow_dataset(&m, &c, &vocab, 1).unwrap();
    let mut cfg = attack_cfg(&m, 1);
    cfg.d_model = 8;
    assert!(train_attack_model(&ds, &cfg, &AttackTrainConfig::default(), 0).is_err());
}

#[test]
fn true_prefix_prompt_never_leaks_the_target() {
    let recs = generate_pii_dataset(20, 3).unwrap();
    for r in &recs {
        for t in PiiType::ALL {
            if t == PiiType::Name {
                assert!(true_prefix_prompt(r, t).is_err());
                continue;
            }
            let p = true_prefix_prompt(r, t).unwrap();
            assert!(!p.contains(r.get(t)), "{p} leaks {}", r.get(t));
            assert!(p.ends_with(&query(r, t)));
            assert_eq!(p.matches(&r.name).count(), 1);
        }
    }
}

#[test]
fn soft_prompt_trains_without_touching_the_victim() {
    let recs = generate_pii_dataset(70, 1).unwrap();
    let texts: Vec<&str> = recs.iter().map(|r| r.rendered.as_str()).collect();
    let vocab = Vocab::from_texts(texts).unwrap();
    let cfg = ModelConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_ff: 12,
        vocab_size: vocab.size(),
        max_seq_len: 96,
        architecture: Architecture::C,
    };
    let victim = TransformerModel::init(cfg, 2).unwrap();
    let before = victim.param_hash();
    let sc = SptConfig {
        epochs: 1,
        ..SptConfig::default()
    };
    let (soft, gens) = baseline_spt(&victim, &recs[..64], &recs[64..], PiiType::Email, &vocab, &sc).unwrap();
    assert_eq!(soft.embeddings.shape(), &[SOFT_PROMPT_LEN, 8]);
    assert_eq!(soft.pairs_used, 64);
    assert_eq!(soft.losses.len(), 1);
    assert!(soft.losses[0].is_finite());
    assert_eq!(gens.len(), 6);
    assert_eq!(victim.param_hash(), before);
    assert!(baseline_spt(&victim, &recs[..10], &recs[64..], PiiType::Email, &vocab, &sc).is_err());
    assert!(baseline_spt(&victim, &recs[..64], &recs[64..], PiiType::Name, &vocab, &sc).is_err());
}
