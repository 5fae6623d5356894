//! Command-line entry point: `validate`, `synth`, `train`, `eval` and
//! `sweep-beta`.
//!
//! Training runs read a flat TOML file whose keys mirror the flags of
//! [`RunOptions`]; a flag given on the command line wins over the file.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{corpus_stats, filter_single_pair, load_corpus, load_text_corpus, write_atomic, SCHEMA_VERSION};
use crate::encoders::ToyEncoderConfig;
use crate::error::{Error, Result};
use crate::evaluation::{emit_report, evaluate_task, load_task, task_files};
use crate::losses::LossConfig;
use crate::synth::{write_all, SynthSpec};
use crate::trainer::{evaluate_dev, Model, Mixing, OptimizerKind, TrainConfig, Trainer};

#[derive(Debug, Parser)]
#[command(name = "mmcse", version, about = "Multimodal contrastive sentence embedding trainer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a multimodal corpus and print its statistics as JSON.
    Validate {
        corpus: PathBuf,
        #[arg(long, default_value = SCHEMA_VERSION)]
        schema_version: String,
        /// Also count phrases lost to truncation at this token budget.
        #[arg(long)]
        max_tokens: Option<usize>,
    },
    /// Write synthetic corpora and STS sets.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy encoder and projection heads.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a trainer checkpoint up to `max_steps`.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        options: RunOptions,
    },
    /// Evaluate a checkpoint on every `*.tsv` task in a directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
        #[arg(long, default_value = "toy")]
        label: String,
    },
    /// One training run per beta value; prints dev Spearman per run.
    SweepBeta {
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        options: RunOptions,
    },
}

/// Every training key. Unset keys fall back to the config file, then to
/// the built-in default.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    /// Text-only corpus, one sentence per line.
    #[arg(long)]
    pub text_corpus: Option<PathBuf>,
    /// Multimodal corpus (JSON Lines).
    #[arg(long)]
    pub multimodal_corpus: Option<PathBuf>,
    /// Dev STS set (TSV) used for checkpoint selection.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub schema_version: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Write `checkpoints/last.ckpt` every N steps (0 = never).
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Required; there is no default learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// sgd | adam
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Defaults to `tau`.
    #[arg(long)]
    pub tau_prime: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// positives | anchors
    #[arg(long)]
    pub text_denominator: Option<String>,
    /// per_phrase | sum
    #[arg(long)]
    pub phrase_normalization: Option<String>,
    /// alternate | proportional | multimodal_only
    #[arg(long)]
    pub mixing: Option<String>,
    /// Compare text views after the training-only pooler (default true).
    #[arg(long)]
    pub project_text_text: Option<bool>,
    /// Toy encoder width.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Hidden width of both projection heads.
    #[arg(long)]
    pub head_hidden: Option<usize>,
}

macro_rules! merge_fields {
    ($lo:ident, $hi:ident; $($f:ident),*) => {
        RunOptions { $($f: $hi.$f.clone().or_else(|| $lo.$f.clone())),* }
    };
}

impl RunOptions {
    /// `self` overridden by every key set in `over`.
    pub fn merged(&self, over: &RunOptions) -> RunOptions {
        merge_fields!(self, over; text_corpus, multimodal_corpus, dev, schema_version, seed, batch_size,
            max_tokens, eval_every, max_steps, checkpoint_every, learning_rate, optimizer, momentum,
            adam_beta1, adam_beta2, adam_eps, grad_clip, tau, tau_prime, alpha, beta, text_denominator,
            phrase_normalization, mixing, project_text_text, hidden, vocab_size, dropout, head_hidden)
    }

    pub fn from_toml_file(path: &Path) -> Result<RunOptions> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e).replace('\n', " ")))
    }
}

fn parse_enum<T: serde::de::DeserializeOwned>(key: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub text_corpus: PathBuf,
    pub multimodal_corpus: PathBuf,
    pub dev: PathBuf,
    pub schema_version: String,
    pub checkpoint_every: u64,
    pub train: TrainConfig,
    pub encoder: ToyEncoderConfig,
    pub head_hidden: usize,
}

impl RunConfig {
    pub fn resolve(o: &RunOptions) -> Result<RunConfig> {
        let need = |p: &Option<PathBuf>, key: &str| {
            p.clone().ok_or_else(|| Error::Config(format!("missing required key {key}")))
        };
        let learning_rate = o
            .learning_rate
            .ok_or_else(|| Error::Config("missing required key learning_rate".into()))?;
        let mut train = TrainConfig::new(learning_rate);
        let seed = o.seed.unwrap_or(0);
        train.seed = seed;
        train.batch_size = o.batch_size.unwrap_or(train.batch_size);
        train.max_tokens = o.max_tokens.unwrap_or(train.max_tokens);
        train.eval_every = o.eval_every.unwrap_or(train.eval_every);
        train.max_steps = o.max_steps.unwrap_or(train.max_steps);
        train.project_text_text = o.project_text_text.unwrap_or(train.project_text_text);
        if let Some(m) = &o.mixing {
            train.mixing = parse_enum::<Mixing>("mixing", m)?;
        }
        let opt = &mut train.optimizer;
        if let Some(k) = &o.optimizer {
            opt.kind = parse_enum::<OptimizerKind>("optimizer", k)?;
        }
        opt.momentum = o.momentum.unwrap_or(opt.momentum);
        opt.adam_beta1 = o.adam_beta1.unwrap_or(opt.adam_beta1);
        opt.adam_beta2 = o.adam_beta2.unwrap_or(opt.adam_beta2);
        opt.adam_eps = o.adam_eps.unwrap_or(opt.adam_eps);
        opt.grad_clip = o.grad_clip;

        let d = LossConfig::default();
        let tau = o.tau.unwrap_or(d.tau);
        train.loss = LossConfig {
            tau,
            tau_prime: o.tau_prime.unwrap_or(tau),
            alpha: o.alpha.unwrap_or(d.alpha),
            beta: o.beta.unwrap_or(d.beta),
            text_denominator: match &o.text_denominator {
                Some(v) => parse_enum("text_denominator", v)?,
                None => d.text_denominator,
            },
            phrase_normalization: match &o.phrase_normalization {
                Some(v) => parse_enum("phrase_normalization", v)?,
                None => d.phrase_normalization,
            },
        };
        train.validate().map_err(|e| Error::Config(e.to_string()))?;

        let de = ToyEncoderConfig::default();
        let encoder = ToyEncoderConfig {
            hidden: o.hidden.unwrap_or(de.hidden),
            vocab_size: o.vocab_size.unwrap_or(de.vocab_size),
            dropout: o.dropout.unwrap_or(de.dropout),
            seed,
        };
        Ok(RunConfig {
            text_corpus: need(&o.text_corpus, "text_corpus")?,
            multimodal_corpus: need(&o.multimodal_corpus, "multimodal_corpus")?,
            dev: need(&o.dev, "dev")?,
            schema_version: o.schema_version.clone().unwrap_or_else(|| SCHEMA_VERSION.to_string()),
            checkpoint_every: o.checkpoint_every.unwrap_or(0),
            train,
            encoder,
            head_hidden: o.head_hidden.unwrap_or(crate::SHARED_DIM),
        })
    }

    /// Defaults the source leaves open, as recorded in every manifest.
    pub fn assumptions(&self) -> Vec<String> {
        let t = &self.train;
        vec![
            format!("mixing={}", serde_json::to_value(t.mixing).unwrap().as_str().unwrap()),
            format!(
                "tau_prime={}",
                if t.loss.tau_prime == t.loss.tau { "tau" } else { "explicit" }
            ),
            format!(
                "text_denominator={}",
                serde_json::to_value(t.loss.text_denominator).unwrap().as_str().unwrap()
            ),
            format!(
                "phrase_normalization={}",
                serde_json::to_value(t.loss.phrase_normalization).unwrap().as_str().unwrap()
            ),
            format!("text_views={}", if t.project_text_text { "pooler" } else { "raw" }),
            "single_pair_records=kept_for_caption_image_term".into(),
            "truncation=last_position_reserved".into(),
        ]
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub steps: u64,
    pub best_dev_score: Option<f64>,
    pub best_step: Option<u64>,
    pub final_dev_score: f64,
    pub initial_combined: Option<f64>,
    pub final_combined: Option<f64>,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Run one training job into `out`; optionally resume from a checkpoint.
pub fn run_training(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<RunSummary> {
    let texts = load_text_corpus(&cfg.text_corpus)?;
    let records = load_corpus(&cfg.multimodal_corpus, &cfg.schema_version)?;
    let dev = load_task(&cfg.dev)?;

    let ckpt_dir = out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.train.seed,
        "config": cfg,
        "corpus_sha256": {
            "text_corpus": sha256_file(&cfg.text_corpus)?,
            "multimodal_corpus": sha256_file(&cfg.multimodal_corpus)?,
            "dev": sha256_file(&cfg.dev)?,
        },
        "assumptions": cfg.assumptions(),
    });
    let manifest_text = serde_json::to_string_pretty(&manifest).expect("manifest serialization") + "\n";
    write_atomic(&out.join("manifest.json"), manifest_text.as_bytes())?;

    let log_path = out.join("train_log.jsonl");
    let partial = out.join("train_log.jsonl.partial");
    let file = File::create(&partial).map_err(|e| Error::io(&partial, e))?;
    let mut sink = BufWriter::new(file);

    let mut trainer = match resume {
        Some(path) => {
            let mut t = Trainer::restore(path, &texts, &records, &dev)?;
            if t.config() != &cfg.train.clone_with_steps(t.config().max_steps) {
                return Err(Error::Checkpoint("checkpoint was written under a different configuration".into()));
            }
            t.set_max_steps(cfg.train.max_steps);
            // replay the logged prefix so the resumed log matches an uninterrupted one
            for entry in &t.state().loss_history {
                let line = serde_json::to_string(entry).expect("log serialization");
                writeln!(sink, "{line}").map_err(|e| Error::io(&partial, e))?;
            }
            t
        }
        None => {
            let model = Model::new(cfg.encoder.clone(), cfg.head_hidden)?;
            Trainer::new(&texts, &records, &dev, model, cfg.train.clone())?
        }
    };
    trainer = trainer.with_checkpoint_dir(&ckpt_dir).with_log(sink);
    while trainer.state().step < cfg.train.max_steps {
        trainer.step()?;
        let step = trainer.state().step;
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            trainer.checkpoint(ckpt_dir.join("last.ckpt"))?;
        }
    }
    trainer.run()?; // flushes the log
    if trainer.state().step > 0 {
        trainer.checkpoint(ckpt_dir.join("final.ckpt"))?;
    }
    let final_dev_score = evaluate_dev(&trainer.model().encoder, &dev, cfg.train.max_tokens)?;
    let state = trainer.state().clone();
    drop(trainer);
    std::fs::rename(&partial, &log_path).map_err(|e| Error::io(&log_path, e))?;

    Ok(RunSummary {
        steps: state.step,
        best_dev_score: state.best_dev_score,
        best_step: state.best_step,
        final_dev_score,
        initial_combined: state.loss_history.first().map(|l| l.loss.combined),
        final_combined: state.loss_history.last().map(|l| l.loss.combined),
    })
}

impl TrainConfig {
    fn clone_with_steps(&self, max_steps: u64) -> TrainConfig {
        TrainConfig {
            max_steps,
            ..self.clone()
        }
    }
}

fn load_options(config: Option<&Path>, over: &RunOptions) -> Result<RunOptions> {
    let base = match config {
        Some(p) => RunOptions::from_toml_file(p)?,
        None => RunOptions::default(),
    };
    Ok(base.merged(over))
}

fn json_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

/// Execute a parsed command, writing results to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let emit = |out: &mut dyn Write, s: &str| writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e));
    match cli.command {
        Command::Validate {
            corpus,
            schema_version,
            max_tokens,
        } => {
            let records = load_corpus(&corpus, &schema_version)?;
            let stats = match max_tokens {
                Some(m) => corpus_stats(&records, m)?,
                None => filter_single_pair(&records).1,
            };
            emit(out, &json_line(&stats))
        }
        Command::Synth { spec, out: dir } => {
            let spec = match spec {
                Some(p) => SynthSpec::load(p)?,
                None => SynthSpec::default(),
            };
            create_dir(&dir)?;
            let summary = write_all(&spec, &dir)?;
            emit(out, &json_line(&summary))
        }
        Command::Train {
            config,
            out: dir,
            resume,
            options,
        } => {
            let cfg = RunConfig::resolve(&load_options(config.as_deref(), &options)?)?;
            let summary = run_training(&cfg, &dir, resume.as_deref())?;
            emit(out, &json_line(&summary))
        }
        Command::Eval {
            checkpoint,
            tasks,
            json,
            label,
        } => {
            let (model, max_tokens) = load_eval_model(&checkpoint)?;
            let files = task_files(&tasks)?;
            if files.is_empty() {
                return Err(Error::InvalidArgument(format!("no *.tsv tasks in {}", tasks.display())));
            }
            let mut scores = Vec::new();
            for (name, path) in files {
                let examples = load_task(&path)?;
                scores.push((name, 100.0 * evaluate_task(&model.encoder, &examples, max_tokens)?));
            }
            let report = emit_report(&scores)?;
            if json {
                emit(out, &report.to_json())
            } else {
                emit(out, report.render_table(&label).trim_end())
            }
        }
        Command::SweepBeta {
            values,
            config,
            out: dir,
            options,
        } => {
            let base = load_options(config.as_deref(), &options)?;
            let mut rows = Vec::new();
            for beta in values {
                let cfg = RunConfig::resolve(&base.merged(&RunOptions {
                    beta: Some(beta),
                    ..RunOptions::default()
                }))?;
                let run_dir = dir.join(format!("beta-{beta}"));
                let summary = run_training(&cfg, &run_dir, None)?;
                rows.push(serde_json::json!({
                    "beta": beta,
                    "dev_spearman": summary.best_dev_score.unwrap_or(summary.final_dev_score),
                    "final_dev_spearman": summary.final_dev_score,
                    "best_step": summary.best_step,
                }));
            }
            let table = serde_json::to_string_pretty(&rows).expect("serializable") + "\n";
            create_dir(&dir)?;
            write_atomic(&dir.join("sweep.json"), table.as_bytes())?;
            for r in &rows {
                emit(out, &json_line(r))?;
            }
            Ok(())
        }
    }
}

fn load_eval_model(path: &Path) -> Result<(Model, usize)> {
    let mut archive = crate::archive::Archive::load(path)?;
    let (model, meta) = crate::trainer::model_from_archive(&mut archive)?;
    let max_tokens = meta["train_config"]["max_tokens"]
        .as_u64()
        .ok_or_else(|| Error::Checkpoint("missing max_tokens".into()))? as usize;
    Ok((model, max_tokens))
}

/// Process exit code of an error class.
pub fn exit_code(err: &Error) -> i32 {
    match err.class() {
        "validation" => 2,
        "bad-arguments" => 4,
        _ => 3,
    }
}

/// Parse `args`, run, and return the process exit code. Errors go to
/// `err` as a single `error[class]: detail` line.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(err, "error[bad-arguments]: {first}");
            return 4;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {}", e.class(), e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}
