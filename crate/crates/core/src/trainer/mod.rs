//! Training loop: batch mixing, the combined objective, optimizer steps,
//! periodic dev evaluation with best-checkpoint selection, and
//! checkpoint/restore.
//!
//! Every random choice is a pure function of the run seed and the step (or
//! batch) counter, so a restored run replays exactly what an uninterrupted
//! run would have done.

mod model;
mod optimizer;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use model::{batch_loss, Batch, BatchData, Model, StepSettings};
pub use optimizer::{Optimizer, OptimizerConfig, OptimizerKind};

use crate::archive::Archive;
use crate::corpus::{epoch_order, ObjectPhraseRecord, PreparedRecord, TextExample};
use crate::encoders::{ToyEncoderConfig, ToyTextEncoder};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_task, StsExample};
use crate::losses::{LossBreakdown, LossConfig};
use crate::rng;

/// How text-only and multimodal batches are interleaved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixing {
    /// Text batch on odd steps, multimodal batch on even steps.
    #[default]
    Alternate,
    /// Multimodal with probability proportional to corpus size.
    Proportional,
    MultimodalOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_tokens: usize,
    pub eval_every: u64,
    pub max_steps: u64,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
    pub mixing: Mixing,
    /// Compare the two text views after the training-only pooler rather
    /// than on raw sentence embeddings.
    pub project_text_text: bool,
}

impl TrainConfig {
    /// Defaults for everything except the learning rate.
    pub fn new(learning_rate: f64) -> Self {
        TrainConfig {
            batch_size: 64,
            max_tokens: 32,
            eval_every: 125,
            max_steps: 0,
            seed: 0,
            optimizer: OptimizerConfig::new(OptimizerKind::Sgd, learning_rate),
            loss: LossConfig::default(),
            mixing: Mixing::Alternate,
            project_text_text: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.eval_every < 1 {
            return Err(Error::InvalidArgument("eval_every must be >= 1".into()));
        }
        if self.max_tokens < 2 {
            return Err(Error::InvalidArgument("max_tokens must be >= 2".into()));
        }
        self.optimizer.validate()?;
        self.loss.validate()
    }

    pub fn step_settings(&self) -> StepSettings {
        StepSettings {
            loss: self.loss.clone(),
            max_tokens: self.max_tokens,
            project_text_text: self.project_text_text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchKind {
    Text,
    Multimodal,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub batch: BatchKind,
    /// Index of the batch within its corpus stream.
    pub batch_id: u64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Batch counters of the two data streams.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamCursor {
    pub text_batches: u64,
    pub multimodal_batches: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub best_dev_score: Option<f64>,
    pub best_step: Option<u64>,
    pub best_checkpoint_path: Option<PathBuf>,
    pub rng_state: StreamCursor,
    pub loss_history: Vec<StepLog>,
    pub eval_history: Vec<(u64, f64)>,
}

impl TrainState {
    fn new() -> Self {
        TrainState {
            step: 0,
            best_dev_score: None,
            best_step: None,
            best_checkpoint_path: None,
            rng_state: StreamCursor::default(),
            loss_history: Vec::new(),
            eval_history: Vec::new(),
        }
    }
}

/// Spearman of the deterministic encoder on a dev set.
pub fn evaluate_dev(encoder: &ToyTextEncoder, dev: &[StsExample], max_tokens: usize) -> Result<f64> {
    evaluate_task(encoder, dev, max_tokens)
}

/// Indices of batch `k` of a stream that reshuffles every epoch. A trailing
/// batch of one item is dropped since it has no in-batch negative.
fn stream_batch(n: usize, batch_size: usize, seed: u64, stream: &str, k: u64) -> Vec<usize> {
    let mut per_epoch = n.div_ceil(batch_size);
    if n % batch_size == 1 {
        per_epoch -= 1;
    }
    let epoch = k / per_epoch as u64;
    let pos = (k % per_epoch as u64) as usize;
    let order = epoch_order(n, seed, stream, epoch);
    order[pos * batch_size..((pos + 1) * batch_size).min(n)].to_vec()
}

pub struct Trainer<'a> {
    config: TrainConfig,
    texts: &'a [TextExample],
    records: &'a [ObjectPhraseRecord],
    prepared: Vec<PreparedRecord>,
    dev: &'a [StsExample],
    model: Model,
    optimizer: Optimizer,
    state: TrainState,
    checkpoint_dir: Option<PathBuf>,
    log: Option<Box<dyn Write + 'a>>,
}

fn slice_lens(model: &Model) -> Vec<usize> {
    model.param_slices().iter().map(|s| s.len()).collect()
}

impl<'a> Trainer<'a> {
    pub fn new(
        texts: &'a [TextExample],
        records: &'a [ObjectPhraseRecord],
        dev: &'a [StsExample],
        model: Model,
        config: TrainConfig,
    ) -> Result<Self> {
        let optimizer = Optimizer::new(config.optimizer.clone(), &slice_lens(&model));
        Self::assemble(texts, records, dev, model, config, optimizer, TrainState::new())
    }

    fn assemble(
        texts: &'a [TextExample],
        records: &'a [ObjectPhraseRecord],
        dev: &'a [StsExample],
        model: Model,
        config: TrainConfig,
        optimizer: Optimizer,
        state: TrainState,
    ) -> Result<Self> {
        config.validate()?;
        let needs_text = config.mixing != Mixing::MultimodalOnly;
        if needs_text && texts.len() < 2 {
            return Err(Error::InvalidArgument("text corpus needs at least 2 sentences".into()));
        }
        if records.len() < 2 {
            return Err(Error::InvalidArgument("multimodal corpus needs at least 2 records".into()));
        }
        if dev.len() == 1 {
            return Err(Error::InvalidArgument("dev set needs at least 2 examples".into()));
        }
        let prepared = records
            .iter()
            .map(|r| PreparedRecord::new(r, config.max_tokens))
            .collect::<Result<Vec<_>>>()?;
        Ok(Trainer {
            config,
            texts,
            records,
            prepared,
            dev,
            model,
            optimizer,
            state,
            checkpoint_dir: None,
            log: None,
        })
    }

    /// Directory receiving `best.ckpt` whenever the dev score improves.
    pub fn with_checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    /// Sink for JSON Lines step logs.
    pub fn with_log(mut self, sink: impl Write + 'a) -> Self {
        self.log = Some(Box::new(sink));
        self
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn set_max_steps(&mut self, max_steps: u64) {
        self.config.max_steps = max_steps;
    }

    pub fn into_parts(self) -> (Model, TrainState) {
        (self.model, self.state)
    }

    fn next_kind(&self, step: u64) -> BatchKind {
        match self.config.mixing {
            Mixing::Alternate if step % 2 == 1 => BatchKind::Text,
            Mixing::Alternate | Mixing::MultimodalOnly => BatchKind::Multimodal,
            Mixing::Proportional => {
                let total = (self.texts.len() + self.records.len()) as f64;
                let mut r = rng::substream(self.config.seed, "mixing", &[step]);
                if r.random::<f64>() < self.records.len() as f64 / total {
                    BatchKind::Multimodal
                } else {
                    BatchKind::Text
                }
            }
        }
    }

    /// The batch used at `step` (1-based) and its stream index.
    fn draw(&self, step: u64, kind: BatchKind) -> (Batch<'_>, u64) {
        let cfg = &self.config;
        let cursor = self.state.rng_state;
        let (n, stream, batch_id) = match kind {
            BatchKind::Text => (self.texts.len(), "shuffle-text", cursor.text_batches),
            BatchKind::Multimodal => (self.records.len(), "shuffle-multimodal", cursor.multimodal_batches),
        };
        let idx = stream_batch(n, cfg.batch_size, cfg.seed, stream, batch_id);
        let view_seeds = (0..idx.len() as u64)
            .map(|j| {
                (
                    rng::substream_seed(cfg.seed, "dropout", &[step, j, 0]),
                    rng::substream_seed(cfg.seed, "dropout", &[step, j, 1]),
                )
            })
            .collect();
        let data = match kind {
            BatchKind::Text => BatchData::Text(idx.iter().map(|&i| self.texts[i].text.as_str()).collect()),
            BatchKind::Multimodal => {
                BatchData::Multimodal(idx.iter().map(|&i| (&self.records[i], &self.prepared[i])).collect())
            }
        };
        (Batch { data, view_seeds }, batch_id)
    }

    /// Run one optimizer step, then evaluate/checkpoint if due.
    pub fn step(&mut self) -> Result<StepLog> {
        let step = self.state.step + 1;
        let kind = self.next_kind(step);
        let settings = self.config.step_settings();
        let (batch, batch_id) = self.draw(step, kind);
        let (loss, grads) = batch_loss(&self.model, &batch, &settings, true).map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("step {step}, {kind:?} batch {batch_id}: {m}")),
            other => other,
        })?;
        drop(batch);
        if !loss.combined.is_finite() {
            return Err(Error::NonFinite(format!(
                "step {step}, {kind:?} batch {batch_id}: combined loss {}",
                loss.combined
            )));
        }
        let grads = grads.expect("gradients requested");
        self.optimizer.step(self.model.param_slices_mut(), grads.param_slices());

        match kind {
            BatchKind::Text => self.state.rng_state.text_batches += 1,
            BatchKind::Multimodal => self.state.rng_state.multimodal_batches += 1,
        }
        self.state.step = step;
        let entry = StepLog {
            step,
            batch: kind,
            batch_id,
            loss,
        };
        if let Some(log) = self.log.as_mut() {
            let line = serde_json::to_string(&entry).expect("log serialization");
            writeln!(log, "{line}").map_err(|e| Error::io("<training log>", e))?;
        }
        self.state.loss_history.push(entry.clone());

        if step.is_multiple_of(self.config.eval_every) && !self.dev.is_empty() {
            self.evaluate_and_select()?;
        }
        Ok(entry)
    }

    fn evaluate_and_select(&mut self) -> Result<()> {
        let score = evaluate_dev(&self.model.encoder, self.dev, self.config.max_tokens)?;
        let step = self.state.step;
        self.state.eval_history.push((step, score));
        // ties keep the earlier checkpoint
        if self.state.best_dev_score.is_none_or(|best| score > best) {
            self.state.best_dev_score = Some(score);
            self.state.best_step = Some(step);
            if let Some(dir) = &self.checkpoint_dir {
                let path = dir.join("best.ckpt");
                self.state.best_checkpoint_path = Some(path.clone());
                self.checkpoint(&path)?;
            }
        }
        Ok(())
    }

    /// Step until `max_steps`.
    pub fn run(&mut self) -> Result<()> {
        while self.state.step < self.config.max_steps {
            self.step()?;
        }
        if let Some(log) = self.log.as_mut() {
            log.flush().map_err(|e| Error::io("<training log>", e))?;
        }
        Ok(())
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new(serde_json::json!({
            "kind": "trainer-checkpoint",
            "encoder_kind": ToyTextEncoder::KIND,
            "encoder_config": self.model.encoder.config,
            "head_hidden": self.model.head_hidden(),
            "train_config": self.config,
            "optimizer_steps": self.optimizer.steps,
            "state": self.state,
        }));
        self.model.write_arrays(&mut a);
        self.optimizer.write_arrays(&mut a);
        a
    }

    pub fn checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    /// Rebuild a trainer from a checkpoint and the same corpora.
    pub fn restore(
        path: impl AsRef<Path>,
        texts: &'a [TextExample],
        records: &'a [ObjectPhraseRecord],
        dev: &'a [StsExample],
    ) -> Result<Self> {
        let mut archive = Archive::load(path)?;
        let (model, meta) = model_from_archive(&mut archive)?;
        let config: TrainConfig = serde_json::from_value(meta["train_config"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad train config: {e}")))?;
        let state: TrainState = serde_json::from_value(meta["state"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad train state: {e}")))?;
        let steps = meta["optimizer_steps"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("missing optimizer_steps".into()))?;
        let optimizer = Optimizer::read_arrays(config.optimizer.clone(), steps, &slice_lens(&model), &mut archive)?;
        Self::assemble(texts, records, dev, model, config, optimizer, state)
    }
}

/// Load the model part of a trainer checkpoint; returns the manifest too.
pub fn model_from_archive(archive: &mut Archive) -> Result<(Model, serde_json::Value)> {
    let meta = archive.manifest.clone();
    if meta["kind"] != "trainer-checkpoint" {
        return Err(Error::Checkpoint(format!("not a trainer checkpoint: kind {}", meta["kind"])));
    }
    let kind = meta["encoder_kind"].as_str().unwrap_or("<missing>");
    if kind != ToyTextEncoder::KIND {
        return Err(Error::Checkpoint(format!(
            "encoder kind mismatch: expected {:?}, found {kind:?}",
            ToyTextEncoder::KIND
        )));
    }
    let enc: ToyEncoderConfig = serde_json::from_value(meta["encoder_config"].clone())
        .map_err(|e| Error::Checkpoint(format!("bad encoder config: {e}")))?;
    let head_hidden = meta["head_hidden"]
        .as_u64()
        .ok_or_else(|| Error::Checkpoint("missing head_hidden".into()))? as usize;
    Ok((Model::read_arrays(enc, head_hidden, archive)?, meta))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let mut archive = Archive::load(path)?;
    model_from_archive(&mut archive).map(|(m, _)| m)
}

/// Train for `config.max_steps` steps.
pub fn train(
    texts: &[TextExample],
    records: &[ObjectPhraseRecord],
    dev: &[StsExample],
    model: Model,
    config: TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(Model, TrainState)> {
    let mut trainer = Trainer::new(texts, records, dev, model, config)?;
    if let Some(dir) = checkpoint_dir {
        trainer = trainer.with_checkpoint_dir(dir);
    }
    trainer.run()?;
    Ok(trainer.into_parts())
}

/// Mean combined loss over a fixed set of multimodal batches and dropout
/// seeds, so models at different points of a run are scored on identical
/// inputs.
pub fn probe_loss(model: &Model, records: &[ObjectPhraseRecord], config: &TrainConfig, num_batches: usize) -> Result<f64> {
    if records.len() < 2 || num_batches == 0 {
        return Err(Error::InvalidArgument("probe needs at least 2 records and 1 batch".into()));
    }
    let prepared = records
        .iter()
        .map(|r| PreparedRecord::new(r, config.max_tokens))
        .collect::<Result<Vec<_>>>()?;
    let settings = config.step_settings();
    let mut total = 0.0;
    for k in 0..num_batches as u64 {
        let idx = stream_batch(records.len(), config.batch_size, config.seed, "probe", k);
        let view_seeds = (0..idx.len() as u64)
            .map(|j| {
                (
                    rng::substream_seed(config.seed, "probe-dropout", &[k, j, 0]),
                    rng::substream_seed(config.seed, "probe-dropout", &[k, j, 1]),
                )
            })
            .collect();
        let batch = Batch {
            data: BatchData::Multimodal(idx.iter().map(|&i| (&records[i], &prepared[i])).collect()),
            view_seeds,
        };
        total += batch_loss(model, &batch, &settings, false)?.0.combined;
    }
    Ok(total / num_batches as f64)
}
