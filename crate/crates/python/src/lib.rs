//! Python bindings for the `mmcse` crate.
//!
//! Matrices cross the boundary as lists of row lists; errors map to
//! `ValueError` (bad input), `OSError` (file access) or `RuntimeError`.

use ndarray::Array2;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mmcse::corpus::{self, ObjectPhraseRecord};
use mmcse::encoders::{TextEncoder, ToyEncoderConfig, ToyTextEncoder};
use mmcse::losses::{self, LossConfig, LossParts, PhraseNormalization};
use mmcse::pooling::PhraseEmbeddingSet;
use mmcse::{evaluation, synth, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::NonFinite(_) | Error::Checkpoint(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// `(phrases, objects, valid)` of one record.
type RawSet = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<bool>);

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Array2::from_shape_vec((n, d), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn cosine_sim(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    losses::cosine_sim(&u, &v).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (anchors, positives, tau = 0.05))]
fn text_contrastive_loss(anchors: Vec<Vec<f64>>, positives: Vec<Vec<f64>>, tau: f64) -> PyResult<f64> {
    losses::text_contrastive_loss(matrix(anchors)?.view(), matrix(positives)?.view(), tau).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (captions, images, tau_prime = 0.05))]
fn image_caption_contrastive_loss(captions: Vec<Vec<f64>>, images: Vec<Vec<f64>>, tau_prime: f64) -> PyResult<f64> {
    losses::image_caption_contrastive_loss(matrix(captions)?.view(), matrix(images)?.view(), tau_prime).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (sets, tau = 0.05, normalization = "per_phrase"))]
fn object_phrase_contrastive_loss(
    sets: Vec<RawSet>,
    tau: f64,
    normalization: &str,
) -> PyResult<f64> {
    let normalization = match normalization {
        "per_phrase" => PhraseNormalization::PerPhrase,
        "sum" => PhraseNormalization::Sum,
        other => return Err(PyValueError::new_err(format!("unknown normalization {other:?}"))),
    };
    let sets = sets
        .into_iter()
        .map(|(p, o, v)| PhraseEmbeddingSet::new(matrix(p)?, matrix(o)?, v).map_err(py_err))
        .collect::<PyResult<Vec<_>>>()?;
    losses::object_phrase_loss_with(&sets, tau, normalization).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (text, img_cap, obj_phrase, alpha = 0.01, beta = 0.005))]
fn combined_loss(text: f64, img_cap: f64, obj_phrase: f64, alpha: f64, beta: f64) -> PyResult<f64> {
    let parts = LossParts {
        text,
        img_cap,
        obj_phrase,
        ..LossParts::default()
    };
    let config = LossConfig {
        alpha,
        beta,
        ..LossConfig::default()
    };
    config.validate().map_err(py_err)?;
    losses::combined_loss(parts, &config).map(|b| b.combined).map_err(py_err)
}

#[pyfunction]
fn spearman(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    evaluation::spearman(&xs, &ys).map_err(py_err)
}

/// Returns `(average, table)` for `(task, score)` pairs.
#[pyfunction]
#[pyo3(signature = (per_task, label = "model"))]
fn emit_report(per_task: Vec<(String, f64)>, label: &str) -> PyResult<(f64, String)> {
    let report = evaluation::emit_report(&per_task).map_err(py_err)?;
    Ok((report.average, report.render_table(label)))
}

#[pyfunction]
#[pyo3(signature = (x, decimals = 1))]
fn round_half_up(x: f64, decimals: i32) -> f64 {
    evaluation::round_half_up(x, decimals)
}

/// Tokens as `(text, char_start, char_end)`.
#[pyfunction]
fn tokenize(text: &str) -> Vec<(String, usize, usize)> {
    mmcse::encoders::tokenizer::tokenize(text)
        .into_iter()
        .map(|t| (t.text, t.char_start, t.char_end))
        .collect()
}

#[pyclass(name = "Record", frozen)]
struct PyRecord {
    inner: ObjectPhraseRecord,
}

#[pymethods]
impl PyRecord {
    #[getter]
    fn record_id(&self) -> &str {
        &self.inner.record_id
    }

    #[getter]
    fn caption(&self) -> &str {
        &self.inner.caption
    }

    /// `(text, char_start, char_end, object_index)` per pair.
    #[getter]
    fn phrase_spans(&self) -> Vec<(String, usize, usize, usize)> {
        self.inner
            .phrase_spans
            .iter()
            .map(|s| (s.text.clone(), s.char_start, s.char_end, s.object_index))
            .collect()
    }

    #[getter]
    fn num_pairs(&self) -> usize {
        self.inner.num_pairs()
    }

    #[getter]
    fn image_feature(&self) -> Vec<f64> {
        self.inner.image_feature.clone()
    }

    #[getter]
    fn object_features(&self) -> Vec<Vec<f64>> {
        self.inner.object_features.clone()
    }

    /// Validity of each phrase under a token budget.
    fn phrase_validity(&self, max_tokens: usize) -> PyResult<Vec<bool>> {
        corpus::PreparedRecord::new(&self.inner, max_tokens)
            .map(|p| p.validity)
            .map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Record({:?}, pairs={})", self.inner.record_id, self.inner.num_pairs())
    }
}

#[pyfunction]
#[pyo3(signature = (path, schema_version = corpus::SCHEMA_VERSION))]
fn load_corpus(path: &str, schema_version: &str) -> PyResult<Vec<PyRecord>> {
    let records = corpus::load_corpus(path, schema_version).map_err(py_err)?;
    Ok(records.into_iter().map(|inner| PyRecord { inner }).collect())
}

/// Records with at least two pairs, plus `(excluded, mean pairs before, mean pairs after)`.
#[pyfunction]
fn filter_single_pair(records: Vec<PyRef<'_, PyRecord>>) -> (Vec<PyRecord>, (usize, f64, f64)) {
    let all: Vec<ObjectPhraseRecord> = records.iter().map(|r| r.inner.clone()).collect();
    let (kept, stats) = corpus::filter_single_pair(&all);
    (
        kept.into_iter().map(|inner| PyRecord { inner }).collect(),
        (
            stats.num_excluded_single_pair,
            stats.mean_pairs_before_filter,
            stats.mean_pairs_per_record,
        ),
    )
}

type TokenRows = (Vec<Vec<f64>>, Vec<(usize, usize)>);

#[pyclass(name = "ToyEncoder")]
struct PyToyEncoder {
    inner: ToyTextEncoder,
}

#[pymethods]
impl PyToyEncoder {
    #[new]
    #[pyo3(signature = (hidden = 64, vocab_size = 4096, dropout = 0.1, seed = 0))]
    fn new(hidden: usize, vocab_size: usize, dropout: f64, seed: u64) -> PyResult<Self> {
        let config = ToyEncoderConfig {
            hidden,
            vocab_size,
            dropout,
            seed,
        };
        ToyTextEncoder::new(config).map(|inner| PyToyEncoder { inner }).map_err(py_err)
    }

    /// Encoder of a trainer checkpoint.
    #[staticmethod]
    fn from_checkpoint(path: &str) -> PyResult<Self> {
        let model = mmcse::trainer::load_model(path).map_err(py_err)?;
        Ok(PyToyEncoder { inner: model.encoder })
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.inner.config.hidden
    }

    /// Sentence embedding; `view_seed` switches dropout on.
    #[pyo3(signature = (text, max_tokens = 32, view_seed = None))]
    fn encode(&self, text: &str, max_tokens: usize, view_seed: Option<u64>) -> PyResult<Vec<f64>> {
        let out = self.inner.encode(text, view_seed, max_tokens).map_err(py_err)?;
        Ok(out.sentence_embedding.to_vec())
    }

    /// Per-token rows (start token first) and their character offsets.
    #[pyo3(signature = (text, max_tokens = 32))]
    fn token_embeddings(&self, text: &str, max_tokens: usize) -> PyResult<TokenRows> {
        let out = self.inner.encode(text, None, max_tokens).map_err(py_err)?;
        let rows = out.token_embeddings.rows().into_iter().map(|r| r.to_vec()).collect();
        Ok((rows, out.token_offsets))
    }

    /// Mean of token rows `[start, end)`.
    #[pyo3(signature = (text, start, end, max_tokens = 32))]
    fn pool_phrase(&self, text: &str, start: usize, end: usize, max_tokens: usize) -> PyResult<Vec<f64>> {
        let out = self.inner.encode(text, None, max_tokens).map_err(py_err)?;
        mmcse::pooling::pool_phrase(&out, (start, end)).map(|v| v.to_vec()).map_err(py_err)
    }

    /// Spearman correlation (not scaled) on `(sentence1, sentence2, gold)` triples.
    #[pyo3(signature = (examples, max_tokens = 32))]
    fn evaluate(&self, examples: Vec<(String, String, f64)>, max_tokens: usize) -> PyResult<f64> {
        let examples: Vec<evaluation::StsExample> = examples
            .into_iter()
            .map(|(sentence_a, sentence_b, gold)| evaluation::StsExample { sentence_a, sentence_b, gold })
            .collect();
        evaluation::evaluate_task(&self.inner, &examples, max_tokens).map_err(py_err)
    }
}

/// Write a synthetic corpus to `out`; `spec` is optional TOML text.
/// Returns `(records, texts, dev, test, mean pairs per record)`.
#[pyfunction]
#[pyo3(signature = (out, spec = None))]
fn synth_write(out: &str, spec: Option<&str>) -> PyResult<(usize, usize, usize, usize, f64)> {
    let spec = match spec {
        Some(text) => synth::SynthSpec::from_toml_str(text).map_err(py_err)?,
        None => synth::SynthSpec::default(),
    };
    let s = synth::write_all(&spec, out).map_err(py_err)?;
    Ok((s.multimodal, s.texts, s.dev, s.test, s.mean_pairs_per_record))
}

/// Run the command-line interface in-process: `(exit code, stdout, stderr)`.
#[pyfunction]
fn run_cli(args: Vec<String>) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("mmcse".to_string()).chain(args);
    let code = mmcse::cli::main_with_args(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8_lossy(&out).into_owned(),
        String::from_utf8_lossy(&err).into_owned(),
    )
}

#[pymodule]
pub fn pymmcse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("IMAGE_FEATURE_DIM", mmcse::IMAGE_FEATURE_DIM)?;
    m.add("SHARED_DIM", mmcse::SHARED_DIM)?;
    m.add_function(wrap_pyfunction!(cosine_sim, m)?)?;
    m.add_function(wrap_pyfunction!(text_contrastive_loss, m)?)?;
    m.add_function(wrap_pyfunction!(image_caption_contrastive_loss, m)?)?;
    m.add_function(wrap_pyfunction!(object_phrase_contrastive_loss, m)?)?;
    m.add_function(wrap_pyfunction!(combined_loss, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(emit_report, m)?)?;
    m.add_function(wrap_pyfunction!(round_half_up, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(filter_single_pair, m)?)?;
    m.add_function(wrap_pyfunction!(synth_write, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_class::<PyRecord>()?;
    m.add_class::<PyToyEncoder>()?;
    Ok(())
}
