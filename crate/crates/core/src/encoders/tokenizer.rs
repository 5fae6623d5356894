//! Whitespace-plus-punctuation tokenizer with character offsets.
//!
//! Alphanumeric runs form one token; every other non-whitespace character is
//! a token on its own. Offsets count Unicode scalar values.

use crate::corpus::PhraseSpan;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current: Option<(usize, String)> = None;
    let mut n = 0;
    for (i, ch) in text.chars().enumerate() {
        n = i + 1;
        if ch.is_alphanumeric() {
            current.get_or_insert_with(|| (i, String::new())).1.push(ch);
            continue;
        }
        if let Some((start, word)) = current.take() {
            tokens.push(Token { text: word, char_start: start, char_end: i });
        }
        if !ch.is_whitespace() {
            tokens.push(Token { text: ch.to_string(), char_start: i, char_end: i + 1 });
        }
    }
    if let Some((start, word)) = current.take() {
        tokens.push(Token { text: word, char_start: start, char_end: n });
    }
    tokens
}

/// Minimal covering token interval for `[char_start, char_end)` among
/// `offsets`, skipping special tokens (empty offsets). `None` when no token
/// overlaps the range.
pub(crate) fn covering_interval(offsets: &[(usize, usize)], char_start: usize, char_end: usize) -> Option<(usize, usize)> {
    let mut first = None;
    let mut last = 0;
    for (i, &(s, e)) in offsets.iter().enumerate() {
        if s < e && s < char_end && e > char_start {
            first.get_or_insert(i);
            last = i;
        }
    }
    first.map(|f| (f, last + 1))
}

/// Token intervals of `spans` in the full tokenization of `text`, counting
/// the synthetic start token at position 0.
pub fn token_intervals(text: &str, spans: &[PhraseSpan]) -> Result<Vec<(usize, usize)>> {
    let n_chars = text.chars().count();
    let mut offsets = vec![(0, 0)];
    offsets.extend(tokenize(text).iter().map(|t| (t.char_start, t.char_end)));
    spans
        .iter()
        .map(|span| {
            if span.char_start >= span.char_end || span.char_end > n_chars {
                return Err(Error::InvalidArgument(format!(
                    "span [{}, {}) outside text of {n_chars} chars",
                    span.char_start, span.char_end
                )));
            }
            covering_interval(&offsets, span.char_start, span.char_end).ok_or_else(|| {
                Error::InvalidArgument(format!("span {:?} covers no token", span.text))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offs(text: &str) -> Vec<(usize, usize)> {
        tokenize(text).iter().map(|t| (t.char_start, t.char_end)).collect()
    }

    #[test]
    fn words_and_punctuation() {
        let toks = tokenize("A dog, running!");
        let words: Vec<_> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(words, ["A", "dog", ",", "running", "!"]);
        assert_eq!(offs("A dog, running!"), [(0, 1), (2, 5), (5, 6), (7, 14), (14, 15)]);
        assert_eq!(offs("  né  "), [(2, 4)]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn mid_token_span_takes_whole_token() {
        let offsets = [(0, 0), (0, 3), (4, 9), (10, 12)];
        assert_eq!(covering_interval(&offsets, 5, 7), Some((2, 3)));
        assert_eq!(covering_interval(&offsets, 2, 11), Some((1, 4)));
        assert_eq!(covering_interval(&offsets, 3, 4), None);
    }
}
