//! Object-phrase corpus and text corpus: file formats, validation,
//! single-pair filtering, truncation masks and deterministic batching.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::tokenizer;
use crate::error::{Error, Result};
use crate::rng;
use crate::IMAGE_FEATURE_DIM;

/// Schema tag written on every corpus line.
pub const SCHEMA_VERSION: &str = "mmcse-corpus/1";

const KNOWN_SCHEMAS: &[&str] = &[SCHEMA_VERSION];

/// A caption phrase grounded to one object of the owning record.
///
/// Offsets count Unicode scalar values, not bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseSpan {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
    pub object_index: usize,
}

/// One image-caption pair decomposed into aligned (object, phrase) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPhraseRecord {
    pub record_id: String,
    pub caption: String,
    pub image_feature: Vec<f64>,
    pub object_features: Vec<Vec<f64>>,
    pub phrase_spans: Vec<PhraseSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextExample {
    pub text: String,
}

impl TextExample {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::InvalidArgument("text example is empty".into()));
        }
        Ok(TextExample { text })
    }
}

/// Slice `s` by character offsets; `None` when out of range.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut idx = s.char_indices().map(|(b, _)| b).chain(std::iter::once(s.len()));
    let b0 = idx.nth(start)?;
    let b1 = if end == start { b0 } else { idx.nth(end - start - 1)? };
    Some(&s[b0..b1])
}

fn check_feature(v: &[f64], what: &str) -> std::result::Result<(), String> {
    if v.len() != IMAGE_FEATURE_DIM {
        return Err(format!(
            "{what}: feature dimension {} != {IMAGE_FEATURE_DIM}",
            v.len()
        ));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(format!("{what}: non-finite value at index {i}"));
    }
    Ok(())
}

impl ObjectPhraseRecord {
    pub fn new(
        record_id: impl Into<String>,
        caption: impl Into<String>,
        image_feature: Vec<f64>,
        object_features: Vec<Vec<f64>>,
        phrase_spans: Vec<PhraseSpan>,
    ) -> Result<Self> {
        let rec = ObjectPhraseRecord {
            record_id: record_id.into(),
            caption: caption.into(),
            image_feature,
            object_features,
            phrase_spans,
        };
        rec.validate().map_err(|m| Error::corpus(0, Some(&rec.record_id), m))?;
        Ok(rec)
    }

    /// Number of object-phrase pairs.
    pub fn num_pairs(&self) -> usize {
        self.phrase_spans.len()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.record_id.is_empty() {
            return Err("empty record_id".into());
        }
        if self.object_features.len() != self.phrase_spans.len() {
            return Err(format!(
                "cardinality mismatch: {} objects, {} phrases",
                self.object_features.len(),
                self.phrase_spans.len()
            ));
        }
        check_feature(&self.image_feature, "image_feature")?;
        for (k, f) in self.object_features.iter().enumerate() {
            check_feature(f, &format!("objects[{k}].feature"))?;
        }
        let caption_len = self.caption.chars().count();
        for (k, span) in self.phrase_spans.iter().enumerate() {
            if span.char_start >= span.char_end || span.char_end > caption_len {
                return Err(format!(
                    "objects[{k}].phrase: span [{}, {}) out of range for caption of {caption_len} chars",
                    span.char_start, span.char_end
                ));
            }
            let slice = char_slice(&self.caption, span.char_start, span.char_end).unwrap_or("");
            if slice != span.text {
                return Err(format!(
                    "objects[{k}].phrase: span text mismatch: {:?} != caption slice {:?}",
                    span.text, slice
                ));
            }
            if span.object_index >= self.object_features.len() {
                return Err(format!(
                    "objects[{k}].phrase: object_index {} out of range",
                    span.object_index
                ));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RawPhrase {
    text: String,
    char_start: usize,
    char_end: usize,
}

#[derive(Serialize, Deserialize)]
struct RawObject {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phrase: Option<RawPhrase>,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    record_id: String,
    caption: String,
    image_feature: Vec<f64>,
    objects: Vec<RawObject>,
    schema_version: String,
}

fn parse_line(line_no: usize, line: &str, schema_version: &str) -> Result<ObjectPhraseRecord> {
    let raw: RawRecord =
        serde_json::from_str(line).map_err(|e| Error::corpus(line_no, None, format!("malformed record: {e}")))?;
    let id = raw.record_id.clone();
    if raw.schema_version != schema_version {
        return Err(Error::corpus(
            line_no,
            Some(&id),
            format!(
                "schema_version {:?} does not match expected {schema_version:?}",
                raw.schema_version
            ),
        ));
    }
    let mut object_features = Vec::with_capacity(raw.objects.len());
    let mut phrase_spans = Vec::with_capacity(raw.objects.len());
    let n_objects = raw.objects.len();
    for obj in raw.objects {
        if let Some(f) = obj.feature {
            object_features.push(f);
        }
        if let Some(p) = obj.phrase {
            phrase_spans.push(PhraseSpan {
                text: p.text,
                char_start: p.char_start,
                char_end: p.char_end,
                object_index: phrase_spans.len(),
            });
        }
    }
    if object_features.len() != n_objects || phrase_spans.len() != n_objects {
        return Err(Error::corpus(
            line_no,
            Some(&id),
            format!(
                "cardinality mismatch: {} objects, {} phrases",
                object_features.len(),
                phrase_spans.len()
            ),
        ));
    }
    let rec = ObjectPhraseRecord {
        record_id: raw.record_id,
        caption: raw.caption,
        image_feature: raw.image_feature,
        object_features,
        phrase_spans,
    };
    rec.validate().map_err(|m| Error::corpus(line_no, Some(&id), m))?;
    Ok(rec)
}

/// Parse corpus text (JSON Lines). Blank lines are ignored.
pub fn parse_corpus(text: &str, schema_version: &str) -> Result<Vec<ObjectPhraseRecord>> {
    if !KNOWN_SCHEMAS.contains(&schema_version) {
        return Err(Error::InvalidArgument(format!(
            "unknown schema version {schema_version:?}"
        )));
    }
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect();
    let parsed: Vec<Result<ObjectPhraseRecord>> = lines
        .par_iter()
        .map(|(n, l)| parse_line(*n, l, schema_version))
        .collect();
    let mut records = Vec::with_capacity(parsed.len());
    let mut seen = HashSet::new();
    for ((line_no, _), r) in lines.iter().zip(parsed) {
        let rec = r?;
        if !seen.insert(rec.record_id.clone()) {
            return Err(Error::corpus(*line_no, Some(&rec.record_id), "duplicate record_id"));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn load_corpus(path: impl AsRef<Path>, schema_version: &str) -> Result<Vec<ObjectPhraseRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, schema_version)
}

pub fn record_to_json(rec: &ObjectPhraseRecord) -> String {
    let raw = RawRecord {
        record_id: rec.record_id.clone(),
        caption: rec.caption.clone(),
        image_feature: rec.image_feature.clone(),
        objects: rec
            .object_features
            .iter()
            .zip(&rec.phrase_spans)
            .map(|(f, p)| RawObject {
                feature: Some(f.clone()),
                phrase: Some(RawPhrase {
                    text: p.text.clone(),
                    char_start: p.char_start,
                    char_end: p.char_end,
                }),
            })
            .collect(),
        schema_version: SCHEMA_VERSION.to_string(),
    };
    serde_json::to_string(&raw).expect("record serialization")
}

/// Write records as JSON Lines via a temp file renamed on success.
///
/// Objects are written in phrase order; records are expected to have
/// `phrase_spans[k].object_index == k`, which `load_corpus` guarantees.
pub fn write_corpus(path: impl AsRef<Path>, records: &[ObjectPhraseRecord]) -> Result<()> {
    let mut out = String::new();
    for rec in records {
        out.push_str(&record_to_json(rec));
        out.push('\n');
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

pub fn load_text_corpus(path: impl AsRef<Path>) -> Result<Vec<TextExample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| TextExample { text: l.to_string() })
        .collect())
}

pub fn write_text_corpus(path: impl AsRef<Path>, texts: &[TextExample]) -> Result<()> {
    let mut out = String::new();
    for t in texts {
        out.push_str(&t.text);
        out.push('\n');
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Write `bytes` to `path.tmp` then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_records: usize,
    pub num_kept: usize,
    pub num_excluded_single_pair: usize,
    /// Mean pairs per record after single-pair exclusion (0 when nothing is kept).
    pub mean_pairs_per_record: f64,
    /// Mean pairs per record over the whole input.
    pub mean_pairs_before_filter: f64,
    /// Phrases whose tokens do not fit the stated budget, when one was given.
    pub num_truncation_affected_phrases: Option<usize>,
    pub max_tokens: Option<usize>,
}

fn mean_pairs<'a>(records: impl Iterator<Item = &'a ObjectPhraseRecord>) -> f64 {
    let (n, total) = records.fold((0usize, 0usize), |(n, t), r| (n + 1, t + r.num_pairs()));
    if n == 0 {
        0.0
    } else {
        total as f64 / n as f64
    }
}

/// Keep records with at least two object-phrase pairs.
///
/// Only the object-phrase objective drops the excluded records; they remain
/// valid caption-image examples.
pub fn filter_single_pair(records: &[ObjectPhraseRecord]) -> (Vec<ObjectPhraseRecord>, CorpusStats) {
    let kept: Vec<ObjectPhraseRecord> = records.iter().filter(|r| r.num_pairs() >= 2).cloned().collect();
    let stats = CorpusStats {
        num_records: records.len(),
        num_kept: kept.len(),
        num_excluded_single_pair: records.len() - kept.len(),
        mean_pairs_per_record: mean_pairs(kept.iter()),
        mean_pairs_before_filter: mean_pairs(records.iter()),
        num_truncation_affected_phrases: None,
        max_tokens: None,
    };
    (kept, stats)
}

/// Stats including the number of kept-record phrases lost to truncation at
/// `max_tokens` under the built-in tokenizer.
pub fn corpus_stats(records: &[ObjectPhraseRecord], max_tokens: usize) -> Result<CorpusStats> {
    let (kept, mut stats) = filter_single_pair(records);
    let mut affected = 0;
    for rec in &kept {
        let spans = tokenizer::token_intervals(&rec.caption, &rec.phrase_spans)?;
        let mask = mark_truncated_phrases(rec, &spans.into_iter().map(Some).collect::<Vec<_>>(), max_tokens)?;
        affected += mask.iter().filter(|v| !**v).count();
    }
    stats.num_truncation_affected_phrases = Some(affected);
    stats.max_tokens = Some(max_tokens);
    Ok(stats)
}

/// Validity mask for the object-phrase objective.
///
/// A phrase is valid iff its token interval `[start, end)` ends strictly
/// before `max_tokens`: the final position of the budget is reserved for the
/// closing special token, so an interval ending at `max_tokens` would read it.
pub fn mark_truncated_phrases(
    record: &ObjectPhraseRecord,
    token_spans: &[Option<(usize, usize)>],
    max_tokens: usize,
) -> Result<Vec<bool>> {
    if token_spans.len() != record.phrase_spans.len() {
        return Err(Error::InvalidArgument(format!(
            "record {}: {} token spans for {} phrases",
            record.record_id,
            token_spans.len(),
            record.phrase_spans.len()
        )));
    }
    if max_tokens == 0 {
        return Err(Error::InvalidArgument("max_tokens must be >= 1".into()));
    }
    Ok(token_spans
        .iter()
        .map(|s| matches!(s, Some((a, b)) if a < b && *b < max_tokens))
        .collect())
}

/// A permutation of `0..n` for one epoch of a named shuffle stream.
pub fn epoch_order(n: usize, seed: u64, stream: &str, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::substream(seed, stream, &[epoch]);
    order.shuffle(&mut r);
    order
}

/// Index batches over one shuffled pass of `n` items; the final batch may be short.
#[derive(Debug, Clone)]
pub struct Batches {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }
}

pub fn make_batches(n: usize, batch_size: usize, seed: u64) -> Result<Batches> {
    if batch_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "batch_size must be >= 2 for in-batch negatives, got {batch_size}"
        )));
    }
    Ok(Batches {
        order: epoch_order(n, seed, "shuffle", 0),
        batch_size,
        pos: 0,
    })
}

/// Per-record data needed by the object-phrase objective, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRecord {
    /// Token interval of each phrase in the full (untruncated) tokenization.
    pub token_spans: Vec<(usize, usize)>,
    pub validity: Vec<bool>,
    /// Admitted to the object-phrase objective: at least two pairs and one valid phrase.
    pub admitted: bool,
}

impl PreparedRecord {
    pub fn new(record: &ObjectPhraseRecord, max_tokens: usize) -> Result<Self> {
        let token_spans = tokenizer::token_intervals(&record.caption, &record.phrase_spans)?;
        let opt: Vec<_> = token_spans.iter().copied().map(Some).collect();
        let validity = mark_truncated_phrases(record, &opt, max_tokens)?;
        let admitted = record.num_pairs() >= 2 && validity.iter().any(|v| *v);
        Ok(PreparedRecord {
            token_spans,
            validity,
            admitted,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalBatch {
    pub indices: Vec<usize>,
    pub pair_counts: Vec<usize>,
    pub validity: Vec<Vec<bool>>,
}

impl MultimodalBatch {
    pub fn assemble(records: &[ObjectPhraseRecord], prepared: &[PreparedRecord], indices: Vec<usize>) -> Self {
        let pair_counts = indices.iter().map(|&i| records[i].num_pairs()).collect();
        let validity = indices.iter().map(|&i| prepared[i].validity.clone()).collect();
        MultimodalBatch {
            indices,
            pair_counts,
            validity,
        }
    }
}

/// Shuffled multimodal batches carrying pair counts and validity masks.
pub fn make_multimodal_batches<'a>(
    records: &'a [ObjectPhraseRecord],
    batch_size: usize,
    seed: u64,
    max_tokens: usize,
) -> Result<impl Iterator<Item = MultimodalBatch> + 'a> {
    let prepared = records
        .iter()
        .map(|r| PreparedRecord::new(r, max_tokens))
        .collect::<Result<Vec<_>>>()?;
    let batches = make_batches(records.len(), batch_size, seed)?;
    Ok(batches.map(move |idx| MultimodalBatch::assemble(records, &prepared, idx)))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn feature(v: f64) -> Vec<f64> {
        vec![v; IMAGE_FEATURE_DIM]
    }

    fn span(caption: &str, phrase: &str, k: usize) -> PhraseSpan {
        let byte = caption.find(phrase).unwrap();
        let start = caption[..byte].chars().count();
        PhraseSpan {
            text: phrase.into(),
            char_start: start,
            char_end: start + phrase.chars().count(),
            object_index: k,
        }
    }

    fn record(id: &str, k: usize) -> ObjectPhraseRecord {
        let words = ["dog", "ball", "tree", "car", "man", "hat"];
        let caption = words[..k].join(" and ");
        let spans = (0..k).map(|i| span(&caption, words[i], i)).collect();
        ObjectPhraseRecord::new(id, caption, feature(0.5), (0..k).map(|i| feature(i as f64)).collect(), spans).unwrap()
    }

    #[test]
    fn char_slice_counts_scalars() {
        assert_eq!(char_slice("héllo wörld", 6, 11), Some("wörld"));
        assert_eq!(char_slice("abc", 0, 3), Some("abc"));
        assert_eq!(char_slice("abc", 3, 3), Some(""));
        assert_eq!(char_slice("abc", 2, 4), None);
    }

    #[test]
    fn load_three_records_in_order() {
        let text: String = ["a", "b", "c"].iter().map(|id| record_to_json(&record(id, 2)) + "\n").collect();
        let recs = parse_corpus(&text, SCHEMA_VERSION).unwrap();
        let ids: Vec<_> = recs.iter().map(|r| r.record_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn span_mismatch_names_record() {
        let mut v: serde_json::Value = serde_json::from_str(&record_to_json(&record("r7", 2))).unwrap();
        v["objects"][1]["phrase"]["text"] = "bal".into();
        let err = parse_corpus(&format!("{v}\n"), SCHEMA_VERSION).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("r7") && msg.contains("span text mismatch"), "{msg}");
        assert!(matches!(err, Error::Corpus { line: 1, .. }));
    }

    #[test]
    fn missing_phrase_is_cardinality_mismatch() {
        let mut v: serde_json::Value = serde_json::from_str(&record_to_json(&record("r1", 5))).unwrap();
        v["objects"][4].as_object_mut().unwrap().remove("phrase");
        let err = parse_corpus(&format!("\n{v}\n"), SCHEMA_VERSION).unwrap_err();
        assert!(err.to_string().contains("cardinality mismatch: 5 objects, 4 phrases"), "{err}");
        assert!(matches!(err, Error::Corpus { line: 2, .. }));

        let r = record("x", 2);
        let e = ObjectPhraseRecord::new("x", r.caption.clone(), feature(0.0), vec![feature(0.0); 3], r.phrase_spans)
            .unwrap_err();
        assert!(e.to_string().contains("cardinality mismatch"));
    }

    #[test]
    fn wrong_dimension_and_bad_json_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&record_to_json(&record("d", 2))).unwrap();
        v["image_feature"] = serde_json::json!([1.0, 2.0]);
        let err = parse_corpus(&format!("{v}"), SCHEMA_VERSION).unwrap_err();
        assert!(err.to_string().contains("feature dimension 2 != 2048"), "{err}");

        let good = record_to_json(&record("g", 2));
        let err = parse_corpus(&format!("{good}\n{{\"record_id\": 3"), SCHEMA_VERSION).unwrap_err();
        assert!(matches!(err, Error::Corpus { line: 2, .. }), "{err}");
    }

    #[test]
    fn schema_and_duplicates() {
        let line = record_to_json(&record("a", 2));
        assert!(matches!(
            parse_corpus(&line, "mmcse-corpus/0"),
            Err(Error::InvalidArgument(_))
        ));
        let other = line.replace(SCHEMA_VERSION, "mmcse-corpus/9");
        assert!(parse_corpus(&other, SCHEMA_VERSION).unwrap_err().to_string().contains("schema_version"));
        let err = parse_corpus(&format!("{line}\n{line}\n"), SCHEMA_VERSION).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn filter_examples() {
        let recs = vec![record("a", 3), record("b", 1), record("c", 2)];
        let (kept, stats) = filter_single_pair(&recs);
        assert_eq!(kept.iter().map(|r| r.num_pairs()).collect::<Vec<_>>(), [3, 2]);
        assert_eq!(stats.num_excluded_single_pair, 1);
        assert_eq!(stats.mean_pairs_before_filter, 2.0);

        let ones = vec![record("a", 1), record("b", 1)];
        let (kept, stats) = filter_single_pair(&ones);
        assert!(kept.is_empty());
        assert_eq!(stats.num_excluded_single_pair, 2);

        let (kept, stats) = filter_single_pair(&[record("a", 4), record("b", 5)]);
        assert_eq!(kept.len(), 2);
        assert_eq!(stats.mean_pairs_per_record, 4.5);
    }

    #[test]
    fn truncation_examples() {
        let r = record("a", 2);
        assert_eq!(mark_truncated_phrases(&r, &[Some((2, 4)), Some((30, 35))], 32).unwrap(), [true, false]);
        assert_eq!(mark_truncated_phrases(&r, &[Some((1, 2)), Some((3, 4))], 32).unwrap(), [true, true]);
        assert_eq!(mark_truncated_phrases(&r, &[Some((29, 31)), Some((30, 32))], 32).unwrap(), [true, false]);
        assert_eq!(mark_truncated_phrases(&r, &[None, Some((1, 2))], 32).unwrap(), [false, true]);
        assert!(mark_truncated_phrases(&r, &[Some((1, 2))], 32).is_err());
    }

    #[test]
    fn batching_examples() {
        let sizes: Vec<usize> = make_batches(130, 64, 0).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, [64, 64, 2]);
        let a: Vec<_> = make_batches(1000, 64, 1).unwrap().collect();
        let b: Vec<_> = make_batches(1000, 64, 1).unwrap().collect();
        let c: Vec<_> = make_batches(1000, 64, 2).unwrap().collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(make_batches(10, 1, 0).is_err());
    }

    #[test]
    fn multimodal_batches_carry_counts_and_masks() {
        let recs = vec![record("a", 3), record("b", 1), record("c", 2)];
        let batches: Vec<_> = make_multimodal_batches(&recs, 2, 5, 32).unwrap().collect();
        assert_eq!(batches.len(), 2);
        for b in &batches {
            for (j, &i) in b.indices.iter().enumerate() {
                assert_eq!(b.pair_counts[j], recs[i].num_pairs());
                assert_eq!(b.validity[j].len(), recs[i].num_pairs());
            }
        }
    }

    #[test]
    fn prepared_record_admission() {
        let r = record("a", 3);
        let p = PreparedRecord::new(&r, 32).unwrap();
        // "dog and ball and tree": start=0, dog=1, and=2, ball=3, and=4, tree=5
        assert_eq!(p.token_spans, [(1, 2), (3, 4), (5, 6)]);
        assert!(p.admitted);
        let p = PreparedRecord::new(&r, 5).unwrap();
        assert_eq!(p.validity, [true, true, false]);
        assert!(p.admitted);
        assert!(!PreparedRecord::new(&record("b", 1), 32).unwrap().admitted);
    }
}
