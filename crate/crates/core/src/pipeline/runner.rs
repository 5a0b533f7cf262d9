use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::partition::{partition_model, StageSpec};
use super::stage::{StageInput, StageModel, StageOutput, StageWorker};
use super::tap::{ActivationRecord, ActivationTap, Message, MessageKind};
use crate::data::{lm_chunks, Corpus, Vocab};
use crate::error::{contract_err, Error, Result};
use crate::model::{finetune_step, LmBatch, TransformerModel};
use crate::optim::{AdamWConfig, OptimizerState};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Number of stages K.
    pub stages: usize,
    /// 1-based index of the curious stage; it records what it receives.
    pub attacker_stage: usize,
    pub microbatches: usize,
    /// Run every stage on the calling thread in a fixed round-robin order
    /// instead of one worker thread per stage.
    pub deterministic: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stages: 6,
            attacker_stage: 3,
            microbatches: 4,
            deterministic: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.microbatches == 0 {
            return contract_err("stages and microbatches must be positive");
        }
        if self.attacker_stage < 2 || self.attacker_stage > self.stages {
            return contract_err(format!(
                "attacker stage {} outside 2..={}",
                self.attacker_stage, self.stages
            ));
        }
        Ok(())
    }

    /// Block index after which the attacker's inbound activation is taken.
    pub fn layer_cut(&self, specs: &[StageSpec]) -> usize {
        specs[self.attacker_stage - 2].hi
    }
}

/// Where a training chunk came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSource {
    pub document: usize,
    pub index: usize,
}

/// Tokenised training chunks with their provenance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingData {
    pub chunks: Vec<Vec<usize>>,
    pub sources: Vec<ChunkSource>,
}

impl TrainingData {
    /// Encodes every document and cuts it into chunks of at most
    /// `max_seq_len + 1` tokens whose inputs tile the document.
    pub fn from_corpus(corpus: &Corpus, vocab: &Vocab, max_seq_len: usize) -> Self {
        let mut chunks = Vec::new();
        let mut sources = Vec::new();
        for (document, doc) in corpus.documents().iter().enumerate() {
            for (index, c) in lm_chunks(&vocab.encode(doc), max_seq_len).into_iter().enumerate() {
                chunks.push(c);
                sources.push(ChunkSource { document, index });
            }
        }
        TrainingData { chunks, sources }
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledStep {
    pub epoch: usize,
    /// Indices into [`TrainingData::chunks`], one per microbatch.
    pub chunks: Vec<usize>,
}

/// Per-epoch seeded shuffle of all chunks, grouped `microbatches` at a
/// time; the last step of an epoch may be short.
pub fn build_schedule(n_chunks: usize, microbatches: usize, epochs: usize, seed: u64) -> Vec<ScheduledStep> {
    let mut steps = Vec::new();
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..n_chunks).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64)));
        for group in order.chunks(microbatches.max(1)) {
            steps.push(ScheduledStep {
                epoch,
                chunks: group.to_vec(),
            });
        }
    }
    steps
}

/// Index of the training chunk a tapped record was computed from.
pub fn record_chunk(schedule: &[ScheduledStep], record: &ActivationRecord) -> Option<usize> {
    schedule
        .get(usize::try_from(record.iteration).ok()?)?
        .chunks
        .get(record.microbatch as usize)
        .copied()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
    pub epoch: usize,
}

pub fn log_to_json_lines(log: &[LogEntry]) -> String {
    log.iter()
        .map(|e| serde_json::to_string(e).expect("log entries serialise") + "\n")
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub model: TransformerModel,
    pub log: Vec<LogEntry>,
    pub records: Vec<ActivationRecord>,
}

/// Pipelined trainer. Build with [`Pipeline::new`], optionally attach a
/// tap, then [`Pipeline::run`].
pub struct Pipeline {
    config: PipelineConfig,
    adam: AdamWConfig,
    tap: Option<ActivationTap>,
    fault: Option<(usize, usize)>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, adam: AdamWConfig) -> Result<Self> {
        config.validate()?;
        adam.validate()?;
        Ok(Pipeline {
            config,
            adam,
            tap: None,
            fault: None,
        })
    }

    pub fn with_tap(mut self, tap: ActivationTap) -> Self {
        self.tap = Some(tap);
        self
    }

    /// Makes `stage` stop without notice when it reaches step `step`,
    /// closing its channels. Used to exercise fault reporting.
    pub fn with_fault(mut self, stage: usize, step: usize) -> Self {
        self.fault = Some((stage, step));
        self
    }

    pub fn run(self, model: TransformerModel, data: &TrainingData, schedule: &[ScheduledStep]) -> Result<TrainingOutcome> {
        let specs = partition_model(&model.config, self.config.stages)?;
        check_schedule(&model, data, schedule)?;
        let config = model.config.clone();
        let workers = StageModel::split(model, &specs)
            .into_iter()
            .map(|s| StageWorker::new(s, self.adam))
            .collect::<Result<Vec<_>>>()?;
        let plan = Arc::new(Plan::new(data, schedule, self.config.attacker_stage, self.fault));
        let (stages, losses, tap) = if self.config.deterministic {
            run_sequential(workers, &plan, self.tap)?
        } else {
            run_threaded(workers, plan.clone(), self.tap)?
        };
        let records = match tap {
            Some(t) => t.finish()?,
            None => Vec::new(),
        };
        let log = schedule
            .iter()
            .zip(losses)
            .enumerate()
            .map(|(step, (s, loss))| LogEntry {
                step,
                loss,
                epoch: s.epoch,
            })
            .collect();
        Ok(TrainingOutcome {
            model: StageModel::join(config, stages)?,
            log,
            records,
        })
    }
}

/// Convenience wrapper: pipelined training with an optional tap.
pub fn run_training(
    config: &PipelineConfig,
    model: TransformerModel,
    data: &TrainingData,
    schedule: &[ScheduledStep],
    adam: AdamWConfig,
    tap: Option<ActivationTap>,
) -> Result<TrainingOutcome> {
    let mut p = Pipeline::new(config.clone(), adam)?;
    if let Some(t) = tap {
        p = p.with_tap(t);
    }
    p.run(model, data, schedule)
}

/// Single-process reference trainer running the same schedule.
pub fn train_monolithic(
    mut model: TransformerModel,
    data: &TrainingData,
    schedule: &[ScheduledStep],
    adam: AdamWConfig,
) -> Result<(TransformerModel, Vec<LogEntry>)> {
    check_schedule(&model, data, schedule)?;
    let mut opt = OptimizerState::new(adam)?;
    let mut log = Vec::with_capacity(schedule.len());
    for (step, s) in schedule.iter().enumerate() {
        let batch = LmBatch::new(s.chunks.iter().map(|&c| data.chunks[c].clone()).collect())?;
        let loss = finetune_step(&mut model, &batch, &mut opt)?;
        log.push(LogEntry {
            step,
            loss,
            epoch: s.epoch,
        });
    }
    Ok((model, log))
}

fn check_schedule(model: &TransformerModel, data: &TrainingData, schedule: &[ScheduledStep]) -> Result<()> {
    for s in schedule {
        if s.chunks.is_empty() {
            return contract_err("scheduled step without microbatches");
        }
        for &c in &s.chunks {
            let Some(chunk) = data.chunks.get(c) else {
                return contract_err(format!("schedule refers to chunk {c} of {}", data.len()));
            };
            if chunk.len() < 2 {
                return contract_err(format!("chunk {c} has no target"));
            }
            model.check_tokens(&chunk[..chunk.len() - 1])?;
            model.check_tokens(&chunk[1..])?;
        }
    }
    Ok(())
}

/// Everything a stage needs to know about the run, shared read-only.
struct Plan {
    steps: Vec<PlanStep>,
    attacker_stage: usize,
    fault: Option<(usize, usize)>,
}

struct PlanStep {
    inputs: Vec<Vec<usize>>,
    targets: Vec<Vec<usize>>,
    scale: f64,
}

impl Plan {
    fn new(data: &TrainingData, schedule: &[ScheduledStep], attacker_stage: usize, fault: Option<(usize, usize)>) -> Self {
        let steps = schedule
            .iter()
            .map(|s| {
                let chunks: Vec<&Vec<usize>> = s.chunks.iter().map(|&c| &data.chunks[c]).collect();
                let n_targets: usize = chunks.iter().map(|c| c.len() - 1).sum();
                PlanStep {
                    inputs: chunks.iter().map(|c| c[..c.len() - 1].to_vec()).collect(),
                    targets: chunks.iter().map(|c| c[1..].to_vec()).collect(),
                    scale: 1.0 / n_targets as f64,
                }
            })
            .collect();
        Plan {
            steps,
            attacker_stage,
            fault,
        }
    }

    fn faulty(&self, stage: usize, step: usize) -> Result<()> {
        if self.fault == Some((stage, step)) {
            return Err(Error::PipelineFault {
                stage,
                reason: format!("stage stopped at step {step}"),
            });
        }
        Ok(())
    }
}

type Finished = (Vec<StageModel>, Vec<f64>, Option<ActivationTap>);

fn message(step: usize, mb: usize, payload: crate::tensor::Tensor, kind: MessageKind) -> Message {
    Message {
        kind,
        iteration: step as u64,
        microbatch: mb as u32,
        payload,
    }
}

/// All stages on the calling thread. Per step: every microbatch forward
/// through stages 1..K, then every microbatch backward through K..1 in
/// microbatch order, then one optimizer step per stage.
fn run_sequential(mut workers: Vec<StageWorker>, plan: &Plan, mut tap: Option<ActivationTap>) -> Result<Finished> {
    let k = workers.len();
    let mut losses = Vec::with_capacity(plan.steps.len());
    for (t, step) in plan.steps.iter().enumerate() {
        for w in &workers {
            plan.faulty(w.index(), t)?;
        }
        let mut loss = 0.0;
        for (mb, ids) in step.inputs.iter().enumerate() {
            let mut input = StageInput::Tokens(ids);
            for w in workers.iter_mut() {
                match w.forward(input, &step.targets[mb], step.scale)? {
                    StageOutput::Activation(a) => {
                        let msg = message(t, mb, a, MessageKind::Forward);
                        if w.index() + 1 == plan.attacker_stage {
                            if let Some(tap) = &mut tap {
                                tap.observe(&msg);
                            }
                        }
                        input = StageInput::Activation(msg.payload);
                    }
                    StageOutput::Loss(l) => {
                        loss += l;
                        break;
                    }
                }
            }
        }
        for _ in 0..step.inputs.len() {
            let mut grad = None;
            for w in workers.iter_mut().rev() {
                grad = w.backward(grad.as_ref())?;
            }
        }
        for w in workers.iter_mut() {
            w.step()?;
        }
        losses.push(loss);
    }
    debug_assert_eq!(workers.len(), k);
    Ok((workers.into_iter().map(|w| w.model).collect(), losses, tap))
}

struct Links {
    from_prev: Option<Receiver<Message>>,
    to_next: Option<Sender<Message>>,
    from_next: Option<Receiver<Message>>,
    to_prev: Option<Sender<Message>>,
}

fn closed(peer: usize) -> Error {
    Error::PipelineFault {
        stage: peer,
        reason: "channel closed early".into(),
    }
}

fn recv(rx: &Receiver<Message>, peer: usize, kind: MessageKind, t: usize, mb: usize) -> Result<Message> {
    let msg = rx.recv().map_err(|_| closed(peer))?;
    if msg.kind != kind || msg.iteration != t as u64 || msg.microbatch != mb as u32 {
        return Err(Error::PipelineFault {
            stage: peer,
            reason: format!(
                "expected {kind:?} ({t}, {mb}), got {:?} ({}, {})",
                msg.kind, msg.iteration, msg.microbatch
            ),
        });
    }
    Ok(msg)
}

fn send(tx: &Sender<Message>, peer: usize, msg: Message) -> Result<()> {
    tx.send(msg).map_err(|_| closed(peer))
}

type StageResult = Result<(StageModel, Vec<f64>, Option<ActivationTap>)>;

fn stage_loop(mut w: StageWorker, plan: &Plan, links: Links, mut tap: Option<ActivationTap>) -> StageResult {
    let i = w.index();
    let mut losses = Vec::new();
    for (t, step) in plan.steps.iter().enumerate() {
        plan.faulty(i, t)?;
        let mut loss = 0.0;
        for (mb, ids) in step.inputs.iter().enumerate() {
            let input = match &links.from_prev {
                None => StageInput::Tokens(ids),
                Some(rx) => {
                    let msg = recv(rx, i - 1, MessageKind::Forward, t, mb)?;
                    if let Some(tap) = &mut tap {
                        tap.observe(&msg);
                    }
                    StageInput::Activation(msg.payload)
                }
            };
            match w.forward(input, &step.targets[mb], step.scale)? {
                StageOutput::Activation(a) => {
                    let tx = links.to_next.as_ref().expect("non-final stage has a successor");
                    send(tx, i + 1, message(t, mb, a, MessageKind::Forward))?;
                }
                StageOutput::Loss(l) => loss += l,
            }
        }
        for mb in 0..step.inputs.len() {
            let grad = match &links.from_next {
                None => None,
                Some(rx) => Some(recv(rx, i + 1, MessageKind::Backward, t, mb)?.payload),
            };
            if let Some(g) = w.backward(grad.as_ref())? {
                let tx = links.to_prev.as_ref().expect("non-first stage has a predecessor");
                send(tx, i - 1, message(t, mb, g, MessageKind::Backward))?;
            }
        }
        w.step()?;
        losses.push(loss);
    }
    Ok((w.model, losses, tap))
}

/// One worker thread per stage connected by in-order channels.
fn run_threaded(workers: Vec<StageWorker>, plan: Arc<Plan>, tap: Option<ActivationTap>) -> Result<Finished> {
    let k = workers.len();
    let mut fwd: Vec<(Option<Sender<Message>>, Option<Receiver<Message>>)> = (0..k).map(|_| (None, None)).collect();
    let mut bwd: Vec<(Option<Sender<Message>>, Option<Receiver<Message>>)> = (0..k).map(|_| (None, None)).collect();
    for s in 0..k.saturating_sub(1) {
        let (tx, rx) = channel();
        fwd[s].0 = Some(tx);
        fwd[s + 1].1 = Some(rx);
        let (tx, rx) = channel();
        bwd[s + 1].0 = Some(tx);
        bwd[s].1 = Some(rx);
    }
    let mut tap = tap;
    let handles: Vec<_> = workers
        .into_iter()
        .zip(fwd.into_iter().zip(bwd))
        .map(|(w, ((to_next, from_prev), (to_prev, from_next)))| {
            let links = Links {
                from_prev,
                to_next,
                from_next,
                to_prev,
            };
            let plan = plan.clone();
            let stage_tap = if w.index() == plan.attacker_stage { tap.take() } else { None };
            thread::spawn(move || stage_loop(w, &plan, links, stage_tap))
        })
        .collect();

    let results: Vec<(usize, StageResult)> = handles
        .into_iter()
        .enumerate()
        .map(|(s, h)| {
            let r = h.join().unwrap_or_else(|_| {
                Err(Error::PipelineFault {
                    stage: s + 1,
                    reason: "worker panicked".into(),
                })
            });
            (s + 1, r)
        })
        .collect();

    let mut oks = Vec::with_capacity(k);
    let mut errs = Vec::new();
    for (s, r) in results {
        match r {
            Ok(v) => oks.push((s, v)),
            Err(e) => errs.push((s, e)),
        }
    }
    // Report the stage that failed on its own rather than a neighbour that
    // merely saw its channel close.
    if !errs.is_empty() {
        let own = errs
            .iter()
            .position(|(s, e)| !matches!(e, Error::PipelineFault { stage, .. } if stage != s))
            .unwrap_or(0);
        return Err(errs.swap_remove(own).1);
    }

    let mut stages = Vec::with_capacity(k);
    let mut losses = Vec::new();
    for (s, (model, l, t)) in oks {
        if s == k {
            losses = l;
        }
        if t.is_some() {
            tap = t;
        }
        stages.push(model);
    }
    Ok((stages, losses, tap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, Module, ModelConfig};

    fn setup(n_layers: usize) -> (TransformerModel, TrainingData) {
        let corpus = Corpus::new(
            "toy",
            crate::data::CorpusRole::Victim,
            vec![
                "the quick brown fox jumps".into(),
                "over the lazy dog again and again".into(),
                "pack my box with five dozen jugs".into(),
            ],
        )
        .unwrap();
        let vocab = crate::data::build_vocab(&[&corpus]).unwrap();
        let cfg = ModelConfig {
            n_layers,
            d_model: 8,
            n_heads: 2,
            d_ff: 12,
            vocab_size: vocab.size(),
            max_seq_len: 10,
            architecture: Architecture::B,
        };
        let data = TrainingData::from_corpus(&corpus, &vocab, cfg.max_seq_len);
        (TransformerModel::init(cfg, 5).unwrap(), data)
    }

    #[test]
    fn schedule_covers_each_chunk_once_per_epoch() {
        let s = build_schedule(10, 4, 2, 1);
        assert_eq!(s.iter().map(|x| x.chunks.len()).collect::<Vec<_>>(), vec![4, 4, 2, 4, 4, 2]);
        for e in 0..2 {
            let mut seen: Vec<usize> = s.iter().filter(|x| x.epoch == e).flat_map(|x| x.chunks.clone()).collect();
            seen.sort();
            assert_eq!(seen, (0..10).collect::<Vec<_>>());
        }
        assert_eq!(s, build_schedule(10, 4, 2, 1));
    }

    #[test]
    fn chunks_tile_documents() {
        let (_, data) = setup(2);
        assert!(data.chunks.iter().all(|c| c.len() <= 11 && c.len() >= 2));
        assert_eq!(data.sources[0], ChunkSource { document: 0, index: 0 });
    }

    #[test]
    fn both_executors_match_the_monolithic_trainer() {
        let (model, data) = setup(4);
        let schedule = build_schedule(data.len(), 3, 2, 9);
        let adam = AdamWConfig::with_lr(1e-2);
        let (mono, mono_log) = train_monolithic(model.clone(), &data, &schedule, adam).unwrap();
        for deterministic in [true, false] {
            let cfg = PipelineConfig {
                stages: 3,
                attacker_stage: 2,
                microbatches: 3,
                deterministic,
            };
            let out = run_training(&cfg, model.clone(), &data, &schedule, adam, Some(ActivationTap::in_memory())).unwrap();
            assert_eq!(out.model.param_hash(), mono.param_hash());
            assert_eq!(out.log, mono_log);
            let n_mb: usize = schedule.iter().map(|s| s.chunks.len()).sum();
            assert_eq!(out.records.len(), n_mb);
            assert!(out.model.params().iter().all(|p| p.grad().is_none()));
        }
    }

    #[test]
    fn injected_fault_names_the_stage() {
        let (model, data) = setup(4);
        let schedule = build_schedule(data.len(), 2, 1, 0);
        for deterministic in [true, false] {
            let cfg = PipelineConfig {
                stages: 4,
                attacker_stage: 2,
                microbatches: 2,
                deterministic,
            };
            let err = Pipeline::new(cfg, AdamWConfig::default())
                .unwrap()
                .with_fault(3, 1)
                .run(model.clone(), &data, &schedule)
                .unwrap_err();
            assert!(matches!(err, Error::PipelineFault { stage: 3, .. }), "{err}");
        }
    }

    #[test]
    fn attacker_on_first_stage_is_rejected() {
        let cfg = PipelineConfig {
            attacker_stage: 1,
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
