//! Baseline / PT / FT / PT+FT training runs.
//!
//! A run has two phases: masked-token pretraining on a text corpus, then
//! fine-tuning of an answer head on a task set. The strategy decides in which
//! phases the alignment loss is added. When a phase's effective weight is zero
//! the alignment pathway is skipped entirely, so such a phase is bitwise
//! identical to a baseline phase with the same seed.

mod checkpoint;
mod data;
mod report;

use std::collections::BTreeMap;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use data::{Corpus, MaskingVocab, MatchCache, Split, TaskData, TaskExample};
pub use report::{format_table, summarize, MeanStd, StrategySummary};

use crate::align::{alignment_gradients, alignment_loss, AlignmentBatch, AlignmentVariant, ProjectionParams};
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::kb::KnowledgeIndex;
use crate::matcher::MatchSpan;
use crate::model::{HeadKind, Model, ModelConfig};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::{Gradients, Matrix};
use crate::tokenizer::{SubwordVocabulary, TokenId};

/// Seed offsets for independent random streams derived from the run seed.
const PROJECTION_SEED: u64 = 0x9e37_79b9_7f4a_7c15;
const PRETRAIN_STREAM: u64 = 1;
const FINETUNE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Baseline,
    Pt,
    Ft,
    PtFt,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Baseline, Strategy::Pt, Strategy::Ft, Strategy::PtFt];

    pub fn aligns(self, phase: Phase) -> bool {
        matches!(
            (self, phase),
            (Strategy::Pt | Strategy::PtFt, Phase::Pretrain) | (Strategy::Ft | Strategy::PtFt, Phase::Finetune)
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::Pt => "pt",
            Strategy::Ft => "ft",
            Strategy::PtFt => "pt_ft",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" | "none" => Ok(Strategy::Baseline),
            "pt" => Ok(Strategy::Pt),
            "ft" => Ok(Strategy::Ft),
            "pt_ft" | "pt+ft" | "ptft" | "pt-ft" => Ok(Strategy::PtFt),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// Alignment weight for every phase the strategy enables.
    pub lambda: f64,
    pub pretrain_lambda: Option<f64>,
    pub finetune_lambda: Option<f64>,
    pub variant: AlignmentVariant,
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub optimizer: OptimizerKind,
    pub mask_prob: f64,
    /// Token budget per sentence.
    pub max_len: usize,
    pub head: HeadKind,
    /// Every n-th corpus sentence is held out to monitor alignment; 0 disables.
    pub heldout_every: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: Strategy::PtFt,
            lambda: 1.0,
            pretrain_lambda: None,
            finetune_lambda: None,
            variant: AlignmentVariant::SquaredL2,
            seed: 0,
            batch_size: 32,
            learning_rate: 5e-5,
            pretrain_epochs: 3,
            finetune_epochs: 3,
            optimizer: OptimizerKind::Adam,
            mask_prob: 0.15,
            max_len: 20,
            head: HeadKind::Classification,
            heldout_every: 10,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, l) in [("lambda", Some(self.lambda)), ("pretrain_lambda", self.pretrain_lambda), ("finetune_lambda", self.finetune_lambda)] {
            if let Some(l) = l {
                if !(l.is_finite() && l >= 0.0) {
                    return bad(format!("{name} must be a finite non-negative number, got {l}"));
                }
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.mask_prob > 0.0 && self.mask_prob <= 1.0) {
            return bad(format!("mask_prob must lie in (0, 1], got {}", self.mask_prob));
        }
        if self.max_len == 0 {
            return bad("max_len must be positive".into());
        }
        if self.head == HeadKind::MaskedToken {
            return bad("task head must be classification or binary".into());
        }
        Ok(())
    }

    /// Alignment weight in effect for `phase`; zero when the strategy disables it.
    pub fn effective_lambda(&self, phase: Phase) -> f64 {
        if !self.strategy.aligns(phase) {
            return 0.0;
        }
        let over = match phase {
            Phase::Pretrain => self.pretrain_lambda,
            Phase::Finetune => self.finetune_lambda,
        };
        over.unwrap_or(self.lambda)
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::builder()
            .str("train-config")
            .bytes(&serde_json::to_vec(self).expect("config serializes"))
            .finish()
    }

    /// Fingerprint shared by runs that differ only in seed and strategy.
    pub fn experiment_fingerprint(&self) -> Fingerprint {
        let mut c = self.clone();
        c.seed = 0;
        c.strategy = Strategy::Baseline;
        c.fingerprint()
    }

    /// Encoder configuration for a vocabulary and knowledge width.
    pub fn resolved_model(&self, vocab_size: usize, d_knowledge: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_knowledge,
            max_text_len: self.model.max_text_len.max(self.max_len),
            num_answers: 0,
            binary_head: false,
            ..self.model.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean over batches of the per-batch main loss.
    pub main_loss: f64,
    /// Alignment loss per matched pair on the training data.
    pub align_loss: f64,
    pub align_pairs: usize,
    /// Alignment loss per matched pair on held-out text, when there is any.
    pub heldout_align: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: Phase,
    pub lambda: f64,
    pub aligned: bool,
    pub steps: usize,
    pub train_examples: usize,
    pub heldout_examples: usize,
    pub initial_heldout_align: Option<f64>,
    pub epochs: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub accuracy: f64,
    pub examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Held-out (test split) accuracy.
    pub accuracy: f64,
    pub examples: usize,
    pub train_accuracy: f64,
    pub groups: BTreeMap<String, GroupMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFingerprints {
    pub vocab: Fingerprint,
    pub index: Fingerprint,
    pub corpus: Fingerprint,
    pub task: Fingerprint,
}

/// Machine-readable outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: Strategy,
    pub seed: u64,
    pub config_fingerprint: Fingerprint,
    /// Identifies the experiment across seeds and strategies; `report` only
    /// aggregates runs that agree on it.
    pub experiment_fingerprint: Fingerprint,
    pub inputs: InputFingerprints,
    pub pretrain: PhaseReport,
    pub finetune: PhaseReport,
    pub metrics: Metrics,
    pub config: TrainConfig,
}

/// One unit of per-example work inside a batch.
enum Job<'a> {
    Masked { ids: Vec<TokenId>, positions: Vec<usize>, targets: Vec<usize> },
    Answer { ids: &'a [TokenId], visual: Option<&'a Matrix>, label: usize, head: HeadKind },
}

impl Job<'_> {
    fn run(&self, model: &Model, pad: TokenId) -> Result<(f64, Gradients)> {
        match self {
            Job::Masked { ids, positions, targets } => model.mlm_loss(ids, None, pad, positions, targets),
            Job::Answer { ids, visual, label, head } => match head {
                HeadKind::Binary => model.binary_loss(ids, *visual, pad, *label),
                _ => model.answer_loss(ids, *visual, pad, *label),
            },
        }
    }

    /// Number of loss terms the job contributes to the batch mean.
    fn terms(&self) -> usize {
        match self {
            Job::Masked { positions, .. } => positions.len(),
            Job::Answer { .. } => 1,
        }
    }
}

/// Selects masked positions and corrupts the input: 80% mask id, 10% random
/// regular token, 10% unchanged. At least one position is masked when any is eligible.
fn mask_sentence(ids: &[TokenId], masking: &MaskingVocab, prob: f64, rng: &mut ChaCha8Rng) -> Job<'static> {
    let eligible: Vec<usize> = (0..ids.len()).filter(|&i| !masking.special[ids[i] as usize]).collect();
    let mut positions: Vec<usize> = eligible.iter().copied().filter(|_| rng.gen::<f64>() < prob).collect();
    if positions.is_empty() && !eligible.is_empty() {
        positions.push(eligible[rng.gen_range(0..eligible.len())]);
    }
    let mut corrupted = ids.to_vec();
    for &p in &positions {
        let r: f64 = rng.gen();
        if r < 0.8 {
            corrupted[p] = masking.mask;
        } else if r < 0.9 && !masking.regular.is_empty() {
            corrupted[p] = masking.regular[rng.gen_range(0..masking.regular.len())];
        }
    }
    Job::Masked {
        targets: positions.iter().map(|&p| ids[p] as usize).collect(),
        ids: corrupted,
        positions,
    }
}

/// Alignment pairs for the given sentences, read from the current word table.
fn alignment_batch(
    sentences: &[&[TokenId]],
    spans: &[&[MatchSpan]],
    table: &Matrix,
    index: &KnowledgeIndex,
) -> Result<AlignmentBatch> {
    let mut batch = AlignmentBatch::default();
    for (ids, sp) in sentences.iter().zip(spans) {
        batch.push_sentence(ids, sp, table, index)?;
    }
    Ok(batch)
}

/// Mean alignment loss per pair over the given sentences.
fn heldout_alignment(
    ckpt: &Checkpoint,
    sentences: &[&[TokenId]],
    spans: &[&[MatchSpan]],
    index: &KnowledgeIndex,
    variant: AlignmentVariant,
) -> Result<Option<f64>> {
    let batch = alignment_batch(sentences, spans, ckpt.model.word_embeddings(), index)?;
    if batch.is_empty() {
        return Ok(None);
    }
    Ok(Some(alignment_loss(&batch, &ckpt.projection, variant)? / batch.len() as f64))
}

struct PhaseData<'a> {
    phase: Phase,
    train: Vec<usize>,
    heldout: Vec<usize>,
    ids: Vec<&'a [TokenId]>,
    spans: &'a [Vec<MatchSpan>],
    pad: TokenId,
}

fn nonfinite(phase: Phase, step: usize, detail: impl Into<String>) -> Error {
    Error::NonFiniteLoss {
        phase: format!("{phase:?}").to_lowercase(),
        step,
        detail: detail.into(),
    }
}

/// Shared optimization loop; `make_job` builds one example's work item and may
/// draw from the phase's random stream (always on the calling thread).
fn run_phase<'a>(
    ckpt: &mut Checkpoint,
    data: &PhaseData<'a>,
    index: &KnowledgeIndex,
    config: &TrainConfig,
    epochs: usize,
    rng: &mut ChaCha8Rng,
    mut make_job: impl FnMut(usize, &mut ChaCha8Rng) -> Job<'a>,
) -> Result<PhaseReport> {
    let lambda = config.effective_lambda(data.phase);
    let aligned = lambda > 0.0;
    if config.strategy.aligns(data.phase) && !aligned {
        warn!("{:?}: strategy enables alignment but its weight is zero; the alignment pathway is skipped", data.phase);
    }
    let held_ids: Vec<&[TokenId]> = data.heldout.iter().map(|&i| data.ids[i]).collect();
    let held_spans: Vec<&[MatchSpan]> = data.heldout.iter().map(|&i| data.spans[i].as_slice()).collect();
    let mut report = PhaseReport {
        phase: data.phase,
        lambda,
        aligned,
        steps: 0,
        train_examples: data.train.len(),
        heldout_examples: data.heldout.len(),
        initial_heldout_align: heldout_alignment(ckpt, &held_ids, &held_spans, index, config.variant)?,
        epochs: Vec::with_capacity(epochs),
    };
    let word_id = ckpt.model.word_embedding_id();

    for epoch in 0..epochs {
        let mut order = data.train.clone();
        order.shuffle(rng);
        let (mut main_sum, mut batches, mut align_sum, mut pairs) = (0.0, 0usize, 0.0, 0usize);

        for chunk in order.chunks(config.batch_size) {
            let jobs: Vec<Job> = chunk.iter().map(|&i| make_job(i, rng)).collect();
            let terms: usize = jobs.iter().map(Job::terms).sum();
            let model = &ckpt.model;
            let results: Vec<Result<(f64, Gradients)>> = jobs.par_iter().map(|j| j.run(model, data.pad)).collect();

            let mut grads = model.params.zero_grads();
            let mut main = 0.0;
            for r in results {
                let (l, g) = r?;
                main += l;
                grads.add_assign(&g);
            }
            if terms > 0 {
                main /= terms as f64;
                grads.scale(1.0 / terms as f64);
            }
            if !main.is_finite() {
                return Err(nonfinite(data.phase, report.steps, format!("main loss {main} in epoch {epoch}")));
            }

            let batch_ids: Vec<&[TokenId]> = chunk.iter().map(|&i| data.ids[i]).collect();
            let batch_spans: Vec<&[MatchSpan]> = chunk.iter().map(|&i| data.spans[i].as_slice()).collect();
            let align_batch = alignment_batch(&batch_ids, &batch_spans, model.word_embeddings(), index)?;
            pairs += align_batch.len();

            let projection_grads = if aligned && !align_batch.is_empty() {
                let ag = alignment_gradients(&align_batch, &ckpt.projection, config.variant)?;
                if !ag.loss.is_finite() {
                    return Err(nonfinite(data.phase, report.steps, format!("alignment loss {} in epoch {epoch}", ag.loss)));
                }
                align_sum += ag.loss;
                ag.accumulate_into_table(&align_batch, grads.get_mut(word_id), lambda);
                let mut w = ag.weight;
                let mut b = ag.bias;
                w.scale(lambda);
                b.scale(lambda);
                Some((w, b))
            } else {
                if !align_batch.is_empty() {
                    // monitored only; never differentiated when the pathway is off
                    align_sum += alignment_loss(&align_batch, &ckpt.projection, config.variant)?;
                }
                None
            };

            if !grads.is_finite() {
                return Err(nonfinite(data.phase, report.steps, "non-finite gradient"));
            }
            {
                let Checkpoint { model, optimizer, .. } = &mut *ckpt;
                let mut params: Vec<&mut Matrix> = model.params.values_mut().iter_mut().collect();
                let g: Vec<&Matrix> = grads.0.iter().collect();
                optimizer.step(&mut params, &g)?;
            }
            if let Some((w, b)) = projection_grads {
                let Checkpoint { projection, projection_optimizer, .. } = &mut *ckpt;
                projection_optimizer.step(&mut [&mut projection.weight, &mut projection.bias], &[&w, &b])?;
            }
            main_sum += main;
            batches += 1;
            report.steps += 1;
        }

        let stats = EpochStats {
            epoch,
            main_loss: if batches > 0 { main_sum / batches as f64 } else { 0.0 },
            align_loss: if pairs > 0 { align_sum / pairs as f64 } else { 0.0 },
            align_pairs: pairs,
            heldout_align: heldout_alignment(ckpt, &held_ids, &held_spans, index, config.variant)?,
        };
        info!(
            "{:?} epoch {epoch}: main {:.4} align {:.4} ({} pairs) heldout {:?}",
            data.phase, stats.main_loss, stats.align_loss, stats.align_pairs, stats.heldout_align
        );
        report.epochs.push(stats);
    }
    Ok(report)
}

fn check_inputs(ckpt: &Checkpoint, config: &TrainConfig, vocab: Option<Fingerprint>, index: &KnowledgeIndex) -> Result<()> {
    config.validate()?;
    if let Some(v) = vocab {
        if v != ckpt.vocab {
            return Err(Error::FingerprintMismatch(format!(
                "data tokenized with vocabulary {} but checkpoint expects {}",
                v.short(),
                ckpt.vocab.short()
            )));
        }
    }
    if index.vocab_fingerprint() != ckpt.vocab {
        return Err(Error::FingerprintMismatch(format!(
            "index built with vocabulary {} but checkpoint expects {}",
            index.vocab_fingerprint().short(),
            ckpt.vocab.short()
        )));
    }
    if index.fingerprint() != ckpt.index {
        return Err(Error::FingerprintMismatch(format!(
            "index {} differs from the checkpoint's index {}",
            index.fingerprint().short(),
            ckpt.index.short()
        )));
    }
    Ok(())
}

/// Masked-token pretraining plus weighted alignment when the strategy enables it.
pub fn pretrain(
    mut ckpt: Checkpoint,
    corpus: &Corpus,
    index: &KnowledgeIndex,
    config: &TrainConfig,
    cache: &MatchCache,
) -> Result<(Checkpoint, PhaseReport)> {
    check_inputs(&ckpt, config, corpus.vocab_fingerprint(), index)?;
    let spans = cache.get_or_match(corpus.fingerprint(), &corpus.sentences, index)?;
    let every = config.heldout_every;
    let (heldout, train): (Vec<usize>, Vec<usize>) =
        (0..corpus.len()).partition(|&i| every > 1 && corpus.len() >= every && i % every == every - 1);
    let data = PhaseData {
        phase: Phase::Pretrain,
        train,
        heldout,
        ids: corpus.sentences.iter().map(|s| s.ids.as_slice()).collect(),
        spans: &spans,
        pad: ckpt.pad,
    };
    ckpt.optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    ckpt.projection_optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(PRETRAIN_STREAM);
    let masking = &corpus.masking;
    let sentences = &corpus.sentences;
    let report = run_phase(&mut ckpt, &data, index, config, config.pretrain_epochs, &mut rng, |i, rng| {
        mask_sentence(&sentences[i].ids, masking, config.mask_prob, rng)
    })?;
    ckpt.phases.push(Phase::Pretrain);
    Ok((ckpt, report))
}

/// Trains the answer head (and encoder) on the task's train split, with
/// weighted alignment when the strategy enables it; reports test accuracy.
pub fn finetune(
    mut ckpt: Checkpoint,
    task: &TaskData,
    index: &KnowledgeIndex,
    config: &TrainConfig,
    cache: &MatchCache,
) -> Result<(Checkpoint, PhaseReport, Metrics)> {
    check_inputs(&ckpt, config, task.tokens.first().map(|t| t.vocab), index)?;
    if task.head != config.head {
        return Err(Error::InvalidConfig(format!("task loaded for {:?} head but config asks for {:?}", task.head, config.head)));
    }
    let train = task.indices(Split::Train);
    let test = task.indices(Split::Test);
    if train.is_empty() && config.finetune_epochs > 0 {
        return Err(Error::InvalidInput("task has no training examples".into()));
    }
    match config.head {
        HeadKind::Binary => ckpt.model.ensure_binary_head(config.seed),
        _ => {
            if ckpt.answers != task.answers || ckpt.model.params.id("head.cls.w").is_none() {
                ckpt.model.reset_answer_head(task.answers.len(), config.seed);
            }
        }
    }
    ckpt.answers = task.answers.clone();
    let spans = cache.get_or_match(task.fingerprint(), &task.tokens, index)?;
    let pad = ckpt.pad;
    let data = PhaseData {
        phase: Phase::Finetune,
        train,
        heldout: test.clone(),
        ids: task.tokens.iter().map(|s| s.ids.as_slice()).collect(),
        spans: &spans,
        pad,
    };
    ckpt.optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    ckpt.projection_optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(FINETUNE_STREAM);
    let use_visual = !ckpt.model.config.text_only;
    let report = run_phase(&mut ckpt, &data, index, config, config.finetune_epochs, &mut rng, |i, _| Job::Answer {
        ids: &task.tokens[i].ids,
        visual: if use_visual { task.visual[i].as_ref() } else { None },
        label: task.labels[i],
        head: task.head,
    })?;
    ckpt.phases.push(Phase::Finetune);
    let metrics = evaluate(&ckpt, task, pad)?;
    Ok((ckpt, report, metrics))
}

/// Predicted label for one example.
pub fn predict(model: &Model, ids: &[TokenId], visual: Option<&Matrix>, pad: TokenId, head: HeadKind) -> Result<usize> {
    let mut fwd = model.forward(ids, visual, pad)?;
    match head {
        HeadKind::Binary => {
            let z = fwd.binary_logit();
            Ok(usize::from(fwd.tape.value(z).data[0] > 0.0))
        }
        _ => {
            let z = fwd.answer_logits();
            let row = &fwd.tape.value(z).data;
            // first maximum wins
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            Ok(best)
        }
    }
}

/// Accuracy on the test split overall and per group, plus train accuracy.
pub fn evaluate(ckpt: &Checkpoint, task: &TaskData, pad: TokenId) -> Result<Metrics> {
    let use_visual = !ckpt.model.config.text_only;
    let correct: Vec<bool> = (0..task.len())
        .into_par_iter()
        .map(|i| {
            let v = if use_visual { task.visual[i].as_ref() } else { None };
            predict(&ckpt.model, &task.tokens[i].ids, v, pad, task.head).map(|p| p == task.labels[i])
        })
        .collect::<Result<_>>()?;
    let acc = |idx: &[usize]| {
        if idx.is_empty() {
            0.0
        } else {
            idx.iter().filter(|&&i| correct[i]).count() as f64 / idx.len() as f64
        }
    };
    let test = task.indices(Split::Test);
    let mut by_group: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for &i in &test {
        if let Some(g) = &task.examples[i].group {
            by_group.entry(g.clone()).or_default().push(i);
        }
    }
    Ok(Metrics {
        accuracy: acc(&test),
        examples: test.len(),
        train_accuracy: acc(&task.indices(Split::Train)),
        groups: by_group
            .into_iter()
            .map(|(g, idx)| (g, GroupMetrics { accuracy: acc(&idx), examples: idx.len() }))
            .collect(),
    })
}

/// Runs pretraining then fine-tuning with alignment enabled per strategy.
pub fn run_strategy(
    config: &TrainConfig,
    vocab: &SubwordVocabulary,
    corpus: &Corpus,
    task: &TaskData,
    index: &KnowledgeIndex,
    cache: &MatchCache,
) -> Result<(Checkpoint, RunReport)> {
    config.validate()?;
    let ckpt = Checkpoint::initialize(config, vocab, index)?;
    let (ckpt, pretrain_report) = pretrain(ckpt, corpus, index, config, cache)?;
    let (ckpt, finetune_report, metrics) = finetune(ckpt, task, index, config, cache)?;
    let report = RunReport {
        strategy: config.strategy,
        seed: config.seed,
        config_fingerprint: config.fingerprint(),
        experiment_fingerprint: Fingerprint::builder()
            .fingerprint(&config.experiment_fingerprint())
            .fingerprint(&vocab.fingerprint())
            .fingerprint(&index.fingerprint())
            .fingerprint(&corpus.fingerprint())
            .fingerprint(&task.fingerprint())
            .finish(),
        inputs: InputFingerprints {
            vocab: vocab.fingerprint(),
            index: index.fingerprint(),
            corpus: corpus.fingerprint(),
            task: task.fingerprint(),
        },
        pretrain: pretrain_report,
        finetune: finetune_report,
        metrics,
        config: config.clone(),
    };
    Ok((ckpt, report))
}

impl Checkpoint {
    /// Fresh weights for a run. The projection draws from its own random
    /// stream so that enabling alignment never perturbs encoder initialization.
    pub fn initialize(config: &TrainConfig, vocab: &SubwordVocabulary, index: &KnowledgeIndex) -> Result<Self> {
        config.validate()?;
        let mc = config.resolved_model(vocab.len(), index.dim());
        let model = Model::new(mc, config.seed)?;
        let projection = ProjectionParams::new(model.config.d_model, index.dim(), config.seed ^ PROJECTION_SEED);
        Ok(Checkpoint {
            config: config.clone(),
            model,
            projection,
            optimizer: Optimizer::new(config.optimizer, config.learning_rate),
            projection_optimizer: Optimizer::new(config.optimizer, config.learning_rate),
            vocab: vocab.fingerprint(),
            index: index.fingerprint(),
            pad: vocab.pad(),
            answers: Vec::new(),
            phases: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests;
