//! Deterministic toy text encoder used as a desk-scale stand-in for a
//! pretrained transformer.
//!
//! Tokens are hashed into an embedding table (the start token has its own
//! row), multiplied by a seeded dropout mask, then mixed with the sequence
//! mean so every output depends on its context:
//!
//! ```text
//! x_t = E[id_t] * m_t
//! c   = mean_t x_t
//! h_t = tanh(x_t W + c U + b)
//! ```
//!
//! Row 0 of the output (the start token) is the sentence embedding.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tokenizer::tokenize;
use super::{EncoderOutput, TextEncoder};
use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::rng::{self, fnv1a};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoderConfig {
    pub hidden: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ToyEncoderConfig {
    fn default() -> Self {
        ToyEncoderConfig {
            hidden: 64,
            vocab_size: 4096,
            dropout: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTextEncoder {
    pub config: ToyEncoderConfig,
    /// `[vocab_size + 1, H]`; the last row is the start token.
    pub embed: Array2<f64>,
    pub w_self: Array2<f64>,
    pub w_ctx: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Intermediates of one forward pass, consumed by [`ToyTextEncoder::backward`].
#[derive(Debug, Clone)]
pub struct ToyCache {
    ids: Vec<usize>,
    masks: Array2<f64>,
    inputs: Array2<f64>,
    context: Array1<f64>,
    outputs: Array2<f64>,
}

fn gaussian(rows: usize, cols: usize, scale: f64, r: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(r);
        z * scale
    })
}

impl ToyTextEncoder {
    pub const KIND: &'static str = "toy";

    pub fn new(config: ToyEncoderConfig) -> Result<Self> {
        if config.hidden < 4 {
            return Err(Error::InvalidArgument(format!(
                "toy encoder hidden width must be >= 4, got {}",
                config.hidden
            )));
        }
        if config.vocab_size == 0 {
            return Err(Error::InvalidArgument("vocab_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout must be in [0, 1), got {}",
                config.dropout
            )));
        }
        let h = config.hidden;
        let mut r = rng::substream(config.seed, "init-text-encoder", &[]);
        let mix_scale = 1.0 / (h as f64).sqrt();
        Ok(ToyTextEncoder {
            embed: gaussian(config.vocab_size + 1, h, mix_scale, &mut r),
            w_self: gaussian(h, h, mix_scale, &mut r),
            w_ctx: gaussian(h, h, mix_scale, &mut r),
            bias: Array1::zeros(h),
            config,
        })
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        ToyTextEncoder {
            config: self.config.clone(),
            embed: Array2::zeros(self.embed.raw_dim()),
            w_self: Array2::zeros(self.w_self.raw_dim()),
            w_ctx: Array2::zeros(self.w_ctx.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    pub fn token_id(&self, token: &str) -> usize {
        (fnv1a(token.to_lowercase().as_bytes()) % self.config.vocab_size as u64) as usize
    }

    fn start_id(&self) -> usize {
        self.config.vocab_size
    }

    fn dropout_masks(&self, t: usize, view_seed: Option<u64>) -> Array2<f64> {
        let h = self.config.hidden;
        let p = self.config.dropout;
        match view_seed {
            Some(seed) if p > 0.0 => {
                let mut r = rng::substream(seed, "dropout-mask", &[]);
                let keep = 1.0 / (1.0 - p);
                Array2::from_shape_fn((t, h), |_| if r.random::<f64>() < p { 0.0 } else { keep })
            }
            _ => Array2::ones((t, h)),
        }
    }

    /// Forward pass keeping the intermediates needed for backpropagation.
    ///
    /// At most `max_tokens - 1` positions are kept; the last position of the
    /// budget is reserved for a closing token as in BERT-style encoders.
    pub fn forward(&self, text: &str, view_seed: Option<u64>, max_tokens: usize) -> Result<(EncoderOutput, ToyCache)> {
        if text.trim().is_empty() {
            return Err(Error::InvalidArgument("cannot encode empty text".into()));
        }
        if max_tokens == 0 {
            return Err(Error::InvalidArgument("max_tokens must be >= 1".into()));
        }
        let tokens = tokenize(text);
        let limit = max_tokens.saturating_sub(1).max(1);
        let t = (tokens.len() + 1).min(limit);
        let truncated = tokens.len() + 1 > t;

        let mut ids = Vec::with_capacity(t);
        let mut offsets = Vec::with_capacity(t);
        ids.push(self.start_id());
        offsets.push((0, 0));
        for tok in tokens.iter().take(t - 1) {
            ids.push(self.token_id(&tok.text));
            offsets.push((tok.char_start, tok.char_end));
        }

        let masks = self.dropout_masks(t, view_seed);
        let mut inputs = Array2::zeros((t, self.config.hidden));
        for (i, &id) in ids.iter().enumerate() {
            let row = &self.embed.row(id) * &masks.row(i);
            inputs.row_mut(i).assign(&row);
        }
        let context = inputs.mean_axis(Axis(0)).expect("t >= 1");
        let ctx_term = context.dot(&self.w_ctx) + &self.bias;
        let mut outputs = inputs.dot(&self.w_self);
        outputs += &ctx_term;
        outputs.mapv_inplace(f64::tanh);

        let out = EncoderOutput::new(outputs.clone(), offsets, truncated, text.chars().count())?;
        Ok((
            out,
            ToyCache {
                ids,
                masks,
                inputs,
                context,
                outputs,
            },
        ))
    }

    /// Accumulate parameter gradients given `d_outputs = dL/dh` (`[T, H]`).
    pub fn backward(&self, cache: &ToyCache, d_outputs: &Array2<f64>, grads: &mut ToyTextEncoder) {
        let t = cache.ids.len() as f64;
        let d_pre = d_outputs * &cache.outputs.mapv(|y| 1.0 - y * y);
        let d_pre_sum = d_pre.sum_axis(Axis(0));

        grads.w_self += &cache.inputs.t().dot(&d_pre);
        let ctx_col = cache.context.view().insert_axis(Axis(1));
        let sum_row = d_pre_sum.view().insert_axis(Axis(0));
        grads.w_ctx += &ctx_col.dot(&sum_row);
        grads.bias += &d_pre_sum;

        let d_ctx = self.w_ctx.dot(&d_pre_sum) / t;
        let mut d_inputs = d_pre.dot(&self.w_self.t());
        d_inputs += &d_ctx;
        d_inputs *= &cache.masks;
        for (i, &id) in cache.ids.iter().enumerate() {
            let mut row = grads.embed.row_mut(id);
            row += &d_inputs.row(i);
        }
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            self.embed.as_slice().unwrap(),
            self.w_self.as_slice().unwrap(),
            self.w_ctx.as_slice().unwrap(),
            self.bias.as_slice().unwrap(),
        ]
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.embed.as_slice_mut().unwrap(),
            self.w_self.as_slice_mut().unwrap(),
            self.w_ctx.as_slice_mut().unwrap(),
            self.bias.as_slice_mut().unwrap(),
        ]
    }

    fn array_table(&self) -> [(&'static str, Vec<usize>); 4] {
        let h = self.config.hidden;
        [
            ("encoder.embed", vec![self.config.vocab_size + 1, h]),
            ("encoder.w_self", vec![h, h]),
            ("encoder.w_ctx", vec![h, h]),
            ("encoder.bias", vec![h]),
        ]
    }

    pub fn write_arrays(&self, archive: &mut Archive) {
        for ((name, shape), data) in self.array_table().into_iter().zip(self.param_slices()) {
            archive.push(name, shape, data);
        }
    }

    /// Rebuild from `config` and the arrays written by [`Self::write_arrays`].
    pub fn read_arrays(config: ToyEncoderConfig, archive: &mut Archive) -> Result<Self> {
        let mut enc = ToyTextEncoder::new(config)?;
        let table = enc.array_table();
        for ((name, shape), slot) in table.iter().zip(enc.param_slices_mut()) {
            slot.copy_from_slice(&archive.take(name, shape)?);
        }
        Ok(enc)
    }

    /// Encoder-only checkpoint: manifest with kind, widths, dropout and seed.
    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new(serde_json::json!({
            "kind": Self::KIND,
            "config": self.config,
        }));
        self.write_arrays(&mut a);
        a
    }

    pub fn from_archive(mut archive: Archive) -> Result<Self> {
        let kind = archive.manifest["kind"].as_str().unwrap_or("<missing>");
        if kind != Self::KIND {
            return Err(Error::Checkpoint(format!(
                "encoder kind mismatch: expected {:?}, found {kind:?}",
                Self::KIND
            )));
        }
        let config: ToyEncoderConfig = serde_json::from_value(archive.manifest["config"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad encoder config: {e}")))?;
        Self::read_arrays(config, &mut archive)
    }
}

impl TextEncoder for ToyTextEncoder {
    fn kind(&self) -> &str {
        Self::KIND
    }

    fn hidden_width(&self) -> usize {
        self.config.hidden
    }

    fn encode(&self, text: &str, view_seed: Option<u64>, max_tokens: usize) -> Result<EncoderOutput> {
        self.forward(text, view_seed, max_tokens).map(|(out, _)| out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(dropout: f64) -> ToyTextEncoder {
        ToyTextEncoder::new(ToyEncoderConfig {
            hidden: 8,
            vocab_size: 97,
            dropout,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn a_cat_tokens() {
        let out = enc(0.0).encode("a cat", None, 32).unwrap();
        assert_eq!(out.token_offsets, [(0, 0), (0, 1), (2, 5)]);
        assert_eq!(out.sentence_embedding, out.token_embeddings.row(0));
    }

    #[test]
    fn determinism_and_views() {
        let e = enc(0.1);
        let a = e.encode("the dog runs in the park", Some(1), 32).unwrap();
        let b = e.encode("the dog runs in the park", Some(1), 32).unwrap();
        assert_eq!(a, b);
        for trial in 0..100u64 {
            let x = e.encode("the dog runs in the park", Some(2 * trial + 1), 32).unwrap();
            let y = e.encode("the dog runs in the park", Some(2 * trial + 2), 32).unwrap();
            assert_eq!(x.token_offsets, y.token_offsets);
            assert_ne!(x.token_embeddings, y.token_embeddings);
        }
        let e0 = enc(0.0);
        assert_eq!(e0.encode("x y", Some(1), 32).unwrap(), e0.encode("x y", Some(2), 32).unwrap());
        assert_eq!(e0.encode("x y", Some(1), 32).unwrap(), e0.encode("x y", None, 32).unwrap());
    }

    #[test]
    fn context_dependence() {
        let e = enc(0.0);
        let a = e.encode("red ball", None, 32).unwrap();
        let b = e.encode("blue ball", None, 32).unwrap();
        assert_ne!(a.token_embeddings.row(2), b.token_embeddings.row(2));
    }

    #[test]
    fn config_errors_and_seeding() {
        assert!(ToyTextEncoder::new(ToyEncoderConfig { hidden: 3, ..Default::default() }).is_err());
        assert_eq!(enc(0.1), enc(0.1));
        assert!(enc(0.0).encode("  ", None, 32).is_err());
    }

    #[test]
    fn encoder_archive_round_trip() {
        let e = enc(0.1);
        let back = ToyTextEncoder::from_archive(Archive::from_bytes(&e.to_archive().to_bytes()).unwrap()).unwrap();
        assert_eq!(e, back);
        let mut bad = e.to_archive();
        bad.manifest["kind"] = "bert".into();
        let err = ToyTextEncoder::from_archive(bad).unwrap_err();
        assert!(err.to_string().contains("kind mismatch"));
    }
}
