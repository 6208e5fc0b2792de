//! Adam training loop with gradient clipping and validation-based model selection.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::fill;
use crate::data::{batch_by_length, EmbeddingSource, EmbeddingTable, NegativeSampler, Sentence, Vocab};
use crate::error::{Error, Result};
use crate::eval::{corpus_f1, Averaging, EvalSettings};
use crate::infer::{parse_tokens, ParseOptions};
use crate::model::{ModelConfig, ModelParams};
use crate::numeric::{scalar_value, Gradients, Graph, Ops, ParamStore, Real, Tensor};
use crate::objective::{chart_loss, negative_vectors, LossKind};
use crate::parser::PunctSet;
use crate::tree::Tree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: Real,
    pub batch_size: usize,
    pub negatives: usize,
    pub clip_norm: Real,
    pub loss: LossKind,
    pub margin: Real,
    /// Negatives are drawn with probability proportional to `freq^negative_power`.
    pub negative_power: f64,
    pub max_steps: u64,
    pub seed: u64,
    pub val_every: u64,
    /// Stop after this many validations without improvement.
    pub patience: Option<u64>,
    pub validation: EvalSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            learning_rate: 1e-3,
            batch_size: 16,
            negatives: 100,
            clip_norm: 5.0,
            loss: LossKind::Margin,
            margin: 1.0,
            negative_power: 1.0,
            max_steps: 2000,
            seed: 0,
            val_every: 250,
            patience: None,
            validation: EvalSettings::wsj(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) || !(self.margin >= 0.0) {
            return Err(Error::Invalid(
                "learning rate and clip norm must be positive, margin non-negative".into(),
            ));
        }
        if self.batch_size == 0 || self.negatives == 0 || self.val_every == 0 {
            return Err(Error::Invalid("batch size, negatives and val_every must be at least 1".into()));
        }
        if !self.negative_power.is_finite() {
            return Err(Error::Invalid("negative power must be finite".into()));
        }
        Ok(())
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, max_norm: Real) -> Result<Real> {
    if !(max_norm > 0.0) {
        return Err(Error::Invalid(format!("clip norm must be > 0, got {max_norm}")));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite { op: "clip_gradients" });
    }
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    Ok(norm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore, learning_rate: Real) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Invalid("optimizer state does not match the parameter set".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in params.ids() {
            let k = id.index();
            let g = grads.grads[k].data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= self.learning_rate * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Everything that a checkpoint persists.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub adam: Adam,
    pub step: u64,
    pub best_f1: Option<f64>,
}

impl TrainState {
    pub fn init(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config.model, config.seed)?;
        let adam = Adam::new(&params.store, config.learning_rate);
        Ok(TrainState {
            config: config.clone(),
            params,
            adam,
            step: 0,
            best_f1: None,
        })
    }

    /// Embedding lookup consistent with this run: fallback vectors use the run seed.
    pub fn fallback_source(&self) -> EmbeddingSource {
        EmbeddingSource::fallback_only(self.config.model.input_dim, self.config.seed)
    }
}

/// Loss, gradients, and leaf ranks for one sentence.
#[derive(Clone, Debug)]
pub struct SentenceResult {
    pub loss: Real,
    pub grads: Gradients,
    pub ranks: Vec<usize>,
}

pub fn sentence_gradients(
    params: &ModelParams,
    inputs: &[Tensor],
    negatives: &[Tensor],
    kind: LossKind,
    margin: Real,
) -> Result<SentenceResult> {
    let mut g = Graph::new(&params.store);
    let leaves: Vec<_> = inputs.iter().map(|v| g.constant(v.clone())).collect();
    let negs: Vec<_> = negatives.iter().map(|v| g.constant(v.clone())).collect();
    let negs = negative_vectors(&mut g, params, &negs)?;
    let chart = fill(&mut g, params, &leaves)?;
    let report = chart_loss(&mut g, &chart, &negs, kind, margin)?;
    Ok(SentenceResult {
        loss: scalar_value(&g, report.loss),
        grads: g.backward(report.loss)?,
        ranks: report.ranks,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    /// Mean sentence loss over the batch.
    pub loss: Real,
    /// Global gradient norm before clipping.
    pub grad_norm: Real,
    pub ranks: Vec<usize>,
}

/// One update from a length-uniform batch. Per-sentence gradients may be
/// computed in parallel; they are summed in batch order.
pub fn train_step(
    state: &mut TrainState,
    batch: &[Vec<Tensor>],
    negatives: &[Tensor],
    parallel: bool,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let cfg = &state.config;
    let params = &state.params;
    let run = |inputs: &Vec<Tensor>| sentence_gradients(params, inputs, negatives, cfg.loss, cfg.margin);
    let results: Vec<SentenceResult> = if parallel {
        batch.par_iter().map(run).collect::<Result<_>>()
    } else {
        batch.iter().map(run).collect::<Result<_>>()
    }
    .map_err(|e| diverged(state.step, e))?;

    let mut grads = Gradients::zeros(&params.store);
    let mut loss = 0.0;
    let mut ranks = Vec::new();
    for r in &results {
        grads.add_assign(&r.grads)?;
        loss += r.loss;
        ranks.extend_from_slice(&r.ranks);
    }
    let n = results.len() as Real;
    grads.scale(1.0 / n);
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::Diverged {
            step: state.step,
            reason: format!("loss is {loss}"),
        });
    }
    let grad_norm = clip_gradients(&mut grads, cfg.clip_norm).map_err(|e| diverged(state.step, e))?;
    let step = state.step;
    state.adam.step(&mut state.params.store, &grads)?;
    state.step += 1;
    Ok(StepMetrics {
        step,
        loss,
        grad_norm,
        ranks,
    })
}

fn diverged(step: u64, e: Error) -> Error {
    if e.is_numeric() {
        Error::Diverged {
            step,
            reason: e.to_string(),
        }
    } else {
        e
    }
}

/// Drives [`train_step`] over a corpus: length-bucketed batches, per-epoch
/// shuffling with the run seed, and one negative set per batch.
pub struct Trainer {
    pub state: TrainState,
    vocab: Vocab,
    table: EmbeddingTable,
    corpus_ids: Vec<Vec<usize>>,
    batches: Vec<Vec<usize>>,
    order: Vec<usize>,
    cursor: usize,
    shuffle: ChaCha8Rng,
    sampler: NegativeSampler,
}

impl Trainer {
    pub fn new(config: &TrainConfig, corpus: &[Sentence], source: &EmbeddingSource) -> Result<Self> {
        Self::from_state(TrainState::init(config)?, corpus, source)
    }

    pub fn from_state(state: TrainState, corpus: &[Sentence], source: &EmbeddingSource) -> Result<Self> {
        let cfg = &state.config;
        if source.dim() != cfg.model.input_dim {
            return Err(Error::Data(format!(
                "embeddings are {}-dimensional but the model expects {}",
                source.dim(),
                cfg.model.input_dim
            )));
        }
        let vocab = Vocab::build(corpus)?;
        let table = EmbeddingTable::build(&vocab, source);
        let corpus_ids = corpus
            .iter()
            .map(|s| s.tokens().iter().map(|t| vocab.id(t).expect("token in vocab")).collect())
            .collect();
        let batches = batch_by_length(corpus, cfg.batch_size);
        let sampler = NegativeSampler::from_vocab(&vocab, cfg.negative_power, cfg.seed.wrapping_add(1))?;
        let shuffle = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
        Ok(Trainer {
            order: Vec::new(),
            cursor: 0,
            state,
            vocab,
            table,
            corpus_ids,
            batches,
            shuffle,
            sampler,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.table
    }

    fn next_batch(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..self.batches.len()).collect();
            self.order.shuffle(&mut self.shuffle);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    pub fn step(&mut self, parallel: bool) -> Result<StepMetrics> {
        let b = self.next_batch();
        let batch: Vec<Vec<Tensor>> = self.batches[b]
            .iter()
            .map(|&s| self.corpus_ids[s].iter().map(|&id| self.table.get(id).clone()).collect())
            .collect();
        let negatives: Vec<Tensor> = self
            .sampler
            .sample(self.state.config.negatives)?
            .into_iter()
            .map(|id| self.table.get(id).clone())
            .collect();
        train_step(&mut self.state, &batch, &negatives, parallel)
    }
}

/// Corpus F1 of the current parameters on a gold treebank.
pub fn validation_f1(
    params: &ModelParams,
    source: &EmbeddingSource,
    gold: &[Tree],
    settings: &EvalSettings,
    parallel: bool,
) -> Result<f64> {
    let opts = ParseOptions::default();
    let run = |g: &Tree| parse_tokens(params, source, &g.tokens(), &opts);
    let preds: Vec<Tree> = if parallel {
        gold.par_iter().map(run).collect::<Result<_>>()?
    } else {
        gold.iter().map(run).collect::<Result<_>>()?
    };
    Ok(corpus_f1(&preds, gold, settings, Averaging::Micro, &PunctSet::default())?.f1 as f64)
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Best-validation state when validation data was given, else the last one.
    pub selected: TrainState,
    pub last: TrainState,
    pub history: Vec<StepMetrics>,
}

/// Trains for `max_steps`, writing `step\tloss\tgrad_norm[\tval_f1]` lines to `log`.
pub fn fit(
    config: &TrainConfig,
    corpus: &[Sentence],
    source: &EmbeddingSource,
    validation: Option<&[Tree]>,
    log: &mut dyn Write,
    parallel: bool,
) -> Result<FitOutcome> {
    let mut trainer = Trainer::new(config, corpus, source)?;
    let mut best: Option<TrainState> = None;
    let mut stale = 0;
    let mut history = Vec::new();
    let log_err = |e: std::io::Error| Error::Io {
        path: "<training log>".into(),
        source: e,
    };
    while trainer.state.step < config.max_steps {
        let m = trainer.step(parallel)?;
        let mut line = format!("{}\t{:.6}\t{:.6}", m.step, m.loss, m.grad_norm);
        let done = trainer.state.step;
        if let Some(gold) = validation {
            if done % config.val_every == 0 || done == config.max_steps {
                let f1 = validation_f1(&trainer.state.params, source, gold, &config.validation, parallel)?;
                line.push_str(&format!("\t{f1:.6}"));
                if trainer.state.best_f1.is_none_or(|b| f1 > b) {
                    trainer.state.best_f1 = Some(f1);
                    best = Some(trainer.state.clone());
                    stale = 0;
                } else {
                    stale += 1;
                }
            }
        }
        writeln!(log, "{line}").map_err(log_err)?;
        history.push(m);
        if config.patience.is_some_and(|p| stale >= p) {
            break;
        }
    }
    let last = trainer.state;
    Ok(FitOutcome {
        selected: best.unwrap_or_else(|| last.clone()),
        last,
        history,
    })
}
