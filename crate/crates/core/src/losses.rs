//! Cosine similarity, the three InfoNCE objectives and their weighted sum.
//!
//! Every objective has a value-only entry point and a `*_grad` variant that
//! also returns gradients with respect to its embedding inputs. All of them
//! are means over contributing rows (or sets) and use log-sum-exp.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pooling::PhraseEmbeddingSet;

/// Norm below which an embedding is treated as degenerate.
pub const NORM_EPS: f64 = 1e-12;

/// Denominator of the text objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextDenominator {
    /// Sum over the positive views `h_j^+` of every sentence in the batch.
    #[default]
    Positives,
    /// Sum over the anchors `h_j` themselves, including `j = i`.
    Anchors,
}

/// Reduction of the per-phrase terms within one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhraseNormalization {
    /// Divide each record's sum by its number of valid phrases.
    #[default]
    PerPhrase,
    /// Plain sum over the record's valid phrases.
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub tau_prime: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub text_denominator: TextDenominator,
    #[serde(default)]
    pub phrase_normalization: PhraseNormalization,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.05,
            tau_prime: 0.05,
            alpha: 0.01,
            beta: 0.005,
            text_denominator: TextDenominator::Positives,
            phrase_normalization: PhraseNormalization::PerPhrase,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) || !(self.tau_prime > 0.0 && self.tau_prime.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperatures must be positive: tau={}, tau_prime={}",
                self.tau, self.tau_prime
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) || !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be non-negative: alpha={}, beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Number of rows (text, caption-image) or records (object-phrase) behind each term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermCounts {
    pub text: usize,
    pub img_cap: usize,
    pub obj_phrase: usize,
}

/// Unweighted loss terms of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub text: f64,
    pub img_cap: f64,
    pub obj_phrase: f64,
    pub counts: TermCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub text_loss: f64,
    pub img_cap_loss: f64,
    pub obj_phrase_loss: f64,
    pub alpha: f64,
    pub beta: f64,
    pub combined: f64,
    pub counts: TermCounts,
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidArgument(format!(
            "cosine of vectors with widths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(nu.is_finite() && nv.is_finite()) {
        return Err(Error::NonFinite("cosine input".into()));
    }
    if nu <= NORM_EPS || nv <= NORM_EPS {
        return Err(Error::Degenerate("zero-norm embedding in cosine similarity".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Normalised rows and norms kept for the backward pass.
#[derive(Debug, Clone)]
pub struct CosineCache {
    a_hat: Array2<f64>,
    b_hat: Array2<f64>,
    a_norm: Array1<f64>,
    b_norm: Array1<f64>,
}

fn normalize_rows(x: ArrayView2<f64>, what: &str) -> Result<(Array2<f64>, Array1<f64>)> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} embeddings")));
    }
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some(i) = norms.iter().position(|n| *n <= NORM_EPS) {
        return Err(Error::Degenerate(format!("{what} row {i} has zero norm")));
    }
    let hat = &x / &norms.view().insert_axis(Axis(1));
    Ok((hat, norms))
}

/// Pairwise cosine similarities `S[i, j] = cos(a_i, b_j)`.
pub fn cosine_matrix(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<(Array2<f64>, CosineCache)> {
    if a.ncols() != b.ncols() {
        return Err(Error::InvalidArgument(format!(
            "cosine of widths {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (a_hat, a_norm) = normalize_rows(a, "left")?;
    let (b_hat, b_norm) = normalize_rows(b, "right")?;
    let s = a_hat.dot(&b_hat.t()).mapv(|v| v.clamp(-1.0, 1.0));
    Ok((
        s,
        CosineCache {
            a_hat,
            b_hat,
            a_norm,
            b_norm,
        },
    ))
}

/// Gradients of a scalar with respect to `a` and `b` given `dS`.
pub fn cosine_matrix_backward(cache: &CosineCache, ds: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    fn through_norm(hat: &Array2<f64>, norm: &Array1<f64>, d_hat: Array2<f64>) -> Array2<f64> {
        let radial = (&d_hat * hat).sum_axis(Axis(1)).insert_axis(Axis(1));
        (d_hat - hat * &radial) / norm.view().insert_axis(Axis(1))
    }
    let da_hat = ds.dot(&cache.b_hat);
    let db_hat = ds.t().dot(&cache.a_hat);
    (
        through_norm(&cache.a_hat, &cache.a_norm, da_hat),
        through_norm(&cache.b_hat, &cache.b_norm, db_hat),
    )
}

/// `(m, r)` with `log Σ exp(x) = m + r`, `m` the maximum.
fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (arg, m) = xs
        .clone()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, x)| if x > best.1 { (i, x) } else { best });
    // the max term contributes exactly 1; ln_1p keeps tiny remainders exact
    let rest: f64 = xs.enumerate().filter(|(i, _)| *i != arg).map(|(_, x)| (x - m).exp()).sum();
    (m, rest.ln_1p())
}

/// Per-row InfoNCE with the positive of row `i` at column `positive[i]`.
/// Returns the summed loss and `dSum/dS`.
fn info_nce_rows(sims: &Array2<f64>, positive: &[usize], tau: f64) -> (f64, Array2<f64>) {
    let mut total = 0.0;
    let mut grad = Array2::zeros(sims.raw_dim());
    for (i, row) in sims.rows().into_iter().enumerate() {
        let (m, r) = log_sum_exp(row.iter().map(|s| s / tau));
        // grouped so an exact positive maximum cancels before adding r
        total += (m - row[positive[i]] / tau) + r;
        let lse = m + r;
        for (j, s) in row.iter().enumerate() {
            grad[[i, j]] = (s / tau - lse).exp() / tau;
        }
        grad[[i, positive[i]]] -= 1.0 / tau;
    }
    (total, grad)
}

fn check_batch(a: ArrayView2<f64>, b: ArrayView2<f64>, what: &str) -> Result<()> {
    if a.nrows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "{what} needs at least 2 rows for in-batch negatives, got {}",
            a.nrows()
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::InvalidArgument(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")))
    }
}

/// Text objective with gradients for anchors and positives.
pub fn text_contrastive_grad(
    anchors: ArrayView2<f64>,
    positives: ArrayView2<f64>,
    tau: f64,
    denominator: TextDenominator,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    check_batch(anchors, positives, "text contrastive loss")?;
    check_tau(tau)?;
    let n = anchors.nrows();
    let diag: Vec<usize> = (0..n).collect();
    match denominator {
        TextDenominator::Positives => {
            let (s, cache) = cosine_matrix(anchors, positives)?;
            let (total, ds) = info_nce_rows(&s, &diag, tau);
            let (da, dp) = cosine_matrix_backward(&cache, &(ds / n as f64));
            Ok((total / n as f64, da, dp))
        }
        TextDenominator::Anchors => {
            let (pos, pos_cache) = cosine_matrix(anchors, positives)?;
            let (den, den_cache) = cosine_matrix(anchors, anchors)?;
            let mut total = 0.0;
            let mut d_pos = Array2::zeros((n, n));
            let mut d_den = Array2::zeros((n, n));
            for i in 0..n {
                let row = den.row(i);
                let (m, r) = log_sum_exp(row.iter().map(|s| s / tau));
                total += (m - pos[[i, i]] / tau) + r;
                let lse = m + r;
                for j in 0..n {
                    d_den[[i, j]] = (row[j] / tau - lse).exp() / (tau * n as f64);
                }
                d_pos[[i, i]] = -1.0 / (tau * n as f64);
            }
            let (da1, dp) = cosine_matrix_backward(&pos_cache, &d_pos);
            let (da2, da3) = cosine_matrix_backward(&den_cache, &d_den);
            Ok((total / n as f64, da1 + da2 + da3, dp))
        }
    }
}

/// Dropout-view text objective (positives-denominator reading).
pub fn text_contrastive_loss(anchors: ArrayView2<f64>, positives: ArrayView2<f64>, tau: f64) -> Result<f64> {
    text_contrastive_grad(anchors, positives, tau, TextDenominator::Positives).map(|(l, _, _)| l)
}

/// Caption-anchored caption-image objective with gradients.
pub fn image_caption_grad(
    captions: ArrayView2<f64>,
    images: ArrayView2<f64>,
    tau_prime: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    check_batch(captions, images, "image-caption contrastive loss")?;
    check_tau(tau_prime)?;
    let n = captions.nrows();
    let (s, cache) = cosine_matrix(captions, images)?;
    let diag: Vec<usize> = (0..n).collect();
    let (total, ds) = info_nce_rows(&s, &diag, tau_prime);
    let (dc, di) = cosine_matrix_backward(&cache, &(ds / n as f64));
    Ok((total / n as f64, dc, di))
}

pub fn image_caption_contrastive_loss(captions: ArrayView2<f64>, images: ArrayView2<f64>, tau_prime: f64) -> Result<f64> {
    image_caption_grad(captions, images, tau_prime).map(|(l, _, _)| l)
}

/// Gradient of the object-phrase term for one set.
#[derive(Debug, Clone)]
pub struct SetGrad {
    pub d_phrases: Array2<f64>,
    pub d_objects: Array2<f64>,
}

/// Object-phrase term over admissible sets: `(value, admitted count, per-set grads)`.
///
/// Negatives for a phrase are the other objects of its own record only.
/// Sets that are not admissible get `None` and contribute nothing; with no
/// admissible set the term is 0 with count 0.
pub fn object_phrase_grad(
    sets: &[PhraseEmbeddingSet],
    tau: f64,
    normalization: PhraseNormalization,
) -> Result<(f64, usize, Vec<Option<SetGrad>>)> {
    check_tau(tau)?;
    let admitted = sets.iter().filter(|s| s.admissible()).count();
    if admitted == 0 {
        return Ok((0.0, 0, vec![None; sets.len()]));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(sets.len());
    for set in sets {
        if !set.admissible() {
            grads.push(None);
            continue;
        }
        let rows: Vec<usize> = (0..set.len()).filter(|&k| set.valid[k]).collect();
        let phrases = set.phrase_vectors.select(Axis(0), &rows);
        let (s, cache) = cosine_matrix(phrases.view(), set.object_vectors.view())?;
        let (sum, ds) = info_nce_rows(&s, &rows, tau);
        let weight = match normalization {
            PhraseNormalization::PerPhrase => 1.0 / rows.len() as f64,
            PhraseNormalization::Sum => 1.0,
        } / admitted as f64;
        total += sum * weight;
        let (dp_valid, d_objects) = cosine_matrix_backward(&cache, &(ds * weight));
        let mut d_phrases = Array2::zeros(set.phrase_vectors.raw_dim());
        for (r, &k) in rows.iter().enumerate() {
            d_phrases.row_mut(k).assign(&dp_valid.row(r));
        }
        grads.push(Some(SetGrad { d_phrases, d_objects }));
    }
    Ok((total, admitted, grads))
}

/// Within-record object-phrase objective (per-phrase normalisation).
///
/// Fails when no set is admissible; the trainer reports that case as a zero
/// term with count 0 instead.
pub fn object_phrase_contrastive_loss(sets: &[PhraseEmbeddingSet], tau: f64) -> Result<f64> {
    object_phrase_loss_with(sets, tau, PhraseNormalization::PerPhrase)
}

pub fn object_phrase_loss_with(sets: &[PhraseEmbeddingSet], tau: f64, normalization: PhraseNormalization) -> Result<f64> {
    let (loss, count, _) = object_phrase_grad(sets, tau, normalization)?;
    if count == 0 {
        return Err(Error::Degenerate(
            "no record with >= 2 pairs and a valid phrase".into(),
        ));
    }
    Ok(loss)
}

/// `text + alpha * img_cap + beta * obj_phrase`.
pub fn combined_loss(parts: LossParts, config: &LossConfig) -> Result<LossBreakdown> {
    for (name, v) in [("text", parts.text), ("img_cap", parts.img_cap), ("obj_phrase", parts.obj_phrase)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} loss is {v}")));
        }
    }
    Ok(LossBreakdown {
        text_loss: parts.text,
        img_cap_loss: parts.img_cap,
        obj_phrase_loss: parts.obj_phrase,
        alpha: config.alpha,
        beta: config.beta,
        combined: parts.text + config.alpha * parts.img_cap + config.beta * parts.obj_phrase,
        counts: parts.counts,
    })
}
