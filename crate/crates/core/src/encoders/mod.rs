//! Text and image encoder contracts, span alignment and projection heads.

mod projection;
pub mod tokenizer;
mod toy;

use ndarray::{Array1, Array2};

use crate::corpus::PhraseSpan;
use crate::error::{Error, Result};

pub use projection::{project, HeadCache, ProjectionHead};
pub use toy::{ToyCache, ToyEncoderConfig, ToyTextEncoder};

/// Output of one forward pass of a text encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// `[T, H]` token outputs; row 0 is the sentence slot.
    pub token_embeddings: Array2<f64>,
    pub sentence_embedding: Array1<f64>,
    /// Character range of each token; special tokens have empty ranges.
    pub token_offsets: Vec<(usize, usize)>,
    /// Whether tokens were dropped to fit the budget.
    pub truncated: bool,
    /// Length of the encoded text in characters.
    pub text_chars: usize,
}

impl EncoderOutput {
    pub fn new(
        token_embeddings: Array2<f64>,
        token_offsets: Vec<(usize, usize)>,
        truncated: bool,
        text_chars: usize,
    ) -> Result<Self> {
        let t = token_embeddings.nrows();
        if t == 0 {
            return Err(Error::InvalidArgument("encoder produced no tokens".into()));
        }
        if token_offsets.len() != t {
            return Err(Error::InvalidArgument(format!(
                "{} token offsets for {t} token embeddings",
                token_offsets.len()
            )));
        }
        if token_embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder output".into()));
        }
        let sentence_embedding = token_embeddings.row(0).to_owned();
        Ok(EncoderOutput {
            token_embeddings,
            sentence_embedding,
            token_offsets,
            truncated,
            text_chars,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.token_embeddings.nrows()
    }
}

/// A sentence encoder usable for training views and evaluation.
pub trait TextEncoder {
    fn kind(&self) -> &str;

    fn hidden_width(&self) -> usize;

    /// Encode `text`. `view_seed = None` disables dropout.
    fn encode(&self, text: &str, view_seed: Option<u64>, max_tokens: usize) -> Result<EncoderOutput>;
}

/// Check that an encoder honours the output contract, in particular that it
/// surfaces character offsets for every non-special token.
pub fn register_encoder(encoder: &dyn TextEncoder) -> Result<()> {
    const PROBE: &str = "a probe sentence, with punctuation";
    let out = encoder.encode(PROBE, None, 64)?;
    if out.token_embeddings.ncols() != encoder.hidden_width() {
        return Err(Error::InvalidArgument(format!(
            "encoder {:?} reports width {} but emits {}",
            encoder.kind(),
            encoder.hidden_width(),
            out.token_embeddings.ncols()
        )));
    }
    let n_words = out.token_offsets.iter().filter(|(s, e)| s < e).count();
    if n_words == 0 || out.token_offsets.iter().any(|&(s, e)| s > e || e > out.text_chars) {
        return Err(Error::InvalidArgument(format!(
            "encoder {:?} does not surface character offsets",
            encoder.kind()
        )));
    }
    Ok(())
}

/// Token interval `[start, end)` of each span in `output`.
///
/// `None` when any part of the span lies in tokens that were dropped to fit
/// the token budget.
pub fn align_spans(output: &EncoderOutput, spans: &[PhraseSpan]) -> Result<Vec<Option<(usize, usize)>>> {
    let kept_end = output
        .token_offsets
        .iter()
        .filter(|(s, e)| s < e)
        .map(|&(_, e)| e)
        .max()
        .unwrap_or(0);
    spans
        .iter()
        .map(|span| {
            if span.char_start >= span.char_end || span.char_end > output.text_chars {
                return Err(Error::InvalidArgument(format!(
                    "span [{}, {}) outside text of {} chars",
                    span.char_start, span.char_end, output.text_chars
                )));
            }
            if output.truncated && span.char_end > kept_end {
                return Ok(None);
            }
            match tokenizer::covering_interval(&output.token_offsets, span.char_start, span.char_end) {
                Some(iv) => Ok(Some(iv)),
                None => Err(Error::InvalidArgument(format!("span {:?} covers no token", span.text))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn output_for(text: &str, max_tokens: usize) -> EncoderOutput {
        let enc = ToyTextEncoder::new(ToyEncoderConfig { hidden: 4, vocab_size: 64, dropout: 0.0, seed: 0 }).unwrap();
        enc.encode(text, None, max_tokens).unwrap()
    }

    fn span(text: &str, start: usize, end: usize) -> PhraseSpan {
        PhraseSpan {
            text: crate::corpus::char_slice(text, start, end).unwrap().to_string(),
            char_start: start,
            char_end: end,
            object_index: 0,
        }
    }

    #[test]
    fn exact_and_partial_token_spans() {
        let text = "one two three four five six";
        let out = output_for(text, 32);
        // tokens 3..=5 are "three four five", chars 8..23
        assert_eq!(align_spans(&out, &[span(text, 8, 23)]).unwrap(), [Some((3, 6))]);
        assert_eq!(align_spans(&out, &[span(text, 9, 12)]).unwrap(), [Some((3, 4))]);
        assert!(align_spans(&out, &[PhraseSpan { text: "x".into(), char_start: 20, char_end: 40, object_index: 0 }]).is_err());
    }

    #[test]
    fn spans_past_budget_are_absent() {
        let text = "one two three four five six";
        // budget 4 keeps start + "one two" (last slot reserved)
        let out = output_for(text, 4);
        assert_eq!(out.num_tokens(), 3);
        let got = align_spans(&out, &[span(text, 0, 3), span(text, 4, 13), span(text, 24, 27)]).unwrap();
        assert_eq!(got, [Some((1, 2)), None, None]);
    }

    #[test]
    fn registration_accepts_toy() {
        let enc = ToyTextEncoder::new(ToyEncoderConfig::default()).unwrap();
        register_encoder(&enc).unwrap();
    }

    struct NoOffsets;
    impl TextEncoder for NoOffsets {
        fn kind(&self) -> &str {
            "no-offsets"
        }
        fn hidden_width(&self) -> usize {
            2
        }
        fn encode(&self, text: &str, _: Option<u64>, _: usize) -> Result<EncoderOutput> {
            EncoderOutput::new(Array2::ones((3, 2)), vec![(0, 0); 3], false, text.chars().count())
        }
    }

    #[test]
    fn registration_rejects_missing_offsets() {
        assert!(register_encoder(&NoOffsets).is_err());
    }

    fn brute_force_minimal(offsets: &[(usize, usize)], s: usize, e: usize) -> Option<(usize, usize)> {
        // smallest [a, b) whose word tokens cover every span char that lies in any token
        let covered = |a: usize, b: usize| {
            (s..e).all(|c| {
                let in_any = offsets.iter().any(|&(ts, te)| ts < te && ts <= c && c < te);
                !in_any || offsets[a..b].iter().any(|&(ts, te)| ts <= c && c < te)
            })
        };
        let mut best: Option<(usize, usize)> = None;
        for a in 0..offsets.len() {
            for b in a + 1..=offsets.len() {
                let has_word = offsets[a..b].iter().any(|&(ts, te)| ts < te && ts < e && te > s);
                if has_word && covered(a, b) && best.is_none_or(|(x, y)| b - a < y - x) {
                    best = Some((a, b));
                }
            }
        }
        best
    }

    proptest! {
        #[test]
        fn alignment_is_minimal_cover(words in proptest::collection::vec("[a-z]{1,5}", 1..8), a in 0usize..40, len in 1usize..20) {
            let text = words.join(" ");
            let n = text.chars().count();
            let start = a % n;
            let end = (start + len).min(n);
            let sp = span(&text, start, end);
            let out = output_for(&text, 64);
            let got = align_spans(&out, std::slice::from_ref(&sp));
            let oracle = brute_force_minimal(&out.token_offsets, start, end);
            match (got, oracle) {
                (Ok(v), Some(iv)) => {
                    prop_assert_eq!(v[0], Some(iv));
                    // shrinking either side loses a span character
                    let (x, y) = iv;
                    let tok_in_span = |i: usize| { let (ts, te) = out.token_offsets[i]; ts < end && te > start };
                    prop_assert!(tok_in_span(x) && tok_in_span(y - 1));
                }
                (Err(_), None) => {}
                (g, o) => prop_assert!(false, "mismatch {:?} vs {:?}", g, o),
            }
        }
    }
}
