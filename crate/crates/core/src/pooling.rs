//! Phrase embeddings by average pooling over aligned token spans, and the
//! per-record embedding sets consumed by the object-phrase objective.

use ndarray::{s, Array1, Array2, ArrayView2};

use crate::corpus::ObjectPhraseRecord;
use crate::encoders::{align_spans, EncoderOutput, ProjectionHead};
use crate::error::{Error, Result};
use crate::SHARED_DIM;

/// Mean of rows `[start, end)` of a token matrix.
pub fn pool_rows(tokens: ArrayView2<f64>, (start, end): (usize, usize)) -> Result<Array1<f64>> {
    if start >= end || end > tokens.nrows() {
        return Err(Error::InvalidArgument(format!(
            "token span [{start}, {end}) invalid for {} tokens",
            tokens.nrows()
        )));
    }
    Ok(tokens.slice(s![start..end, ..]).sum_axis(ndarray::Axis(0)) / (end - start) as f64)
}

pub fn pool_phrase(output: &EncoderOutput, token_span: (usize, usize)) -> Result<Array1<f64>> {
    pool_rows(output.token_embeddings.view(), token_span)
}

/// Projected phrase and object vectors of one record.
///
/// Rows whose phrase is invalid (truncated) hold a zero phrase vector; their
/// object vector is still present and still acts as a negative for the
/// other phrases.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseEmbeddingSet {
    pub phrase_vectors: Array2<f64>,
    pub object_vectors: Array2<f64>,
    pub valid: Vec<bool>,
}

impl PhraseEmbeddingSet {
    pub fn new(phrase_vectors: Array2<f64>, object_vectors: Array2<f64>, valid: Vec<bool>) -> Result<Self> {
        if phrase_vectors.nrows() != object_vectors.nrows() || valid.len() != phrase_vectors.nrows() {
            return Err(Error::InvalidArgument(format!(
                "phrase set rows disagree: {} phrases, {} objects, {} flags",
                phrase_vectors.nrows(),
                object_vectors.nrows(),
                valid.len()
            )));
        }
        if phrase_vectors.ncols() != object_vectors.ncols() {
            return Err(Error::InvalidArgument("phrase/object widths differ".into()));
        }
        Ok(PhraseEmbeddingSet {
            phrase_vectors,
            object_vectors,
            valid,
        })
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    /// No valid phrase remains.
    pub fn is_empty(&self) -> bool {
        !self.valid.iter().any(|v| *v)
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Whether the set takes part in the object-phrase objective.
    pub fn admissible(&self) -> bool {
        self.len() >= 2 && !self.is_empty()
    }
}

/// Pool, project and pair every phrase of `record` with its object.
pub fn build_phrase_set(
    record: &ObjectPhraseRecord,
    output: &EncoderOutput,
    text_head: &ProjectionHead,
    image_head: &ProjectionHead,
    validity: &[bool],
) -> Result<PhraseEmbeddingSet> {
    let k = record.num_pairs();
    if validity.len() != k {
        return Err(Error::InvalidArgument(format!(
            "{} validity flags for {k} phrases",
            validity.len()
        )));
    }
    let spans = align_spans(output, &record.phrase_spans)?;
    let valid: Vec<bool> = validity
        .iter()
        .zip(&spans)
        .map(|(v, s)| *v && s.is_some_and(|(_, e)| e <= output.num_tokens()))
        .collect();

    let mut phrase_vectors = Array2::zeros((k, SHARED_DIM));
    let hidden = output.token_embeddings.ncols();
    let mut pooled = Array2::zeros((k, hidden));
    for (i, span) in spans.iter().enumerate() {
        if valid[i] {
            pooled.row_mut(i).assign(&pool_phrase(output, span.expect("valid span"))?);
        }
    }
    let (projected, _) = text_head.forward(pooled.view())?;
    for i in (0..k).filter(|&i| valid[i]) {
        phrase_vectors.row_mut(i).assign(&projected.row(i));
    }

    let mut objects = Array2::zeros((k, record.image_feature.len()));
    for span in &record.phrase_spans {
        let f = &record.object_features[span.object_index];
        objects.row_mut(span.object_index).assign(&ndarray::ArrayView1::from(f.as_slice()));
    }
    // rows follow phrase order
    let order: Vec<usize> = record.phrase_spans.iter().map(|p| p.object_index).collect();
    let objects = objects.select(ndarray::Axis(0), &order);
    let (object_vectors, _) = image_head.forward(objects.view())?;

    PhraseEmbeddingSet::new(phrase_vectors, object_vectors, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PhraseSpan;
    use crate::encoders::{TextEncoder, ToyEncoderConfig, ToyTextEncoder};
    use crate::IMAGE_FEATURE_DIM;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn mean_of_one_and_two() {
        let t = array![[1.0, 2.0], [3.0, 6.0], [5.0, -1.0]];
        assert_eq!(pool_rows(t.view(), (1, 2)).unwrap(), array![3.0, 6.0]);
        assert_eq!(pool_rows(t.view(), (0, 2)).unwrap(), array![2.0, 4.0]);
        assert!(pool_rows(t.view(), (2, 2)).is_err());
        assert!(pool_rows(t.view(), (1, 4)).is_err());
    }

    #[test]
    fn matches_direct_summation() {
        let mut r = crate::rng::substream(1, "pool", &[]);
        for _ in 0..200 {
            let rows = r.random_range(1..20);
            let t = Array2::from_shape_fn((rows, 7), |_| r.random_range(-3.0..3.0));
            let a = r.random_range(0..rows);
            let b = r.random_range(a + 1..=rows);
            let got = pool_rows(t.view(), (a, b)).unwrap();
            for c in 0..7 {
                let mut sum = 0.0;
                for i in a..b {
                    sum += t[[i, c]];
                }
                assert!((got[c] - sum / (b - a) as f64).abs() <= 1e-12);
            }
            let scaled = pool_rows((&t * 2.5).view(), (a, b)).unwrap();
            for c in 0..7 {
                assert!((scaled[c] - 2.5 * got[c]).abs() <= 1e-12);
            }
        }
    }

    fn setup(caption: &str, phrases: &[&str]) -> (ObjectPhraseRecord, ToyTextEncoder, ProjectionHead, ProjectionHead) {
        let spans = phrases
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let start = caption[..caption.find(p).unwrap()].chars().count();
                PhraseSpan { text: p.to_string(), char_start: start, char_end: start + p.chars().count(), object_index: k }
            })
            .collect();
        let feats = (0..phrases.len()).map(|k| vec![k as f64 * 0.01 + 0.1; IMAGE_FEATURE_DIM]).collect();
        let rec = ObjectPhraseRecord::new("r", caption, vec![0.2; IMAGE_FEATURE_DIM], feats, spans).unwrap();
        let enc = ToyTextEncoder::new(ToyEncoderConfig { hidden: 8, ..Default::default() }).unwrap();
        let th = ProjectionHead::new(8, 16, 1, "text").unwrap();
        let ih = ProjectionHead::new(IMAGE_FEATURE_DIM, 16, 1, "image").unwrap();
        (rec, enc, th, ih)
    }

    #[test]
    fn shape_contract_and_truncation() {
        let (rec, enc, th, ih) = setup("a dog chases a red ball near a tree", &["a dog", "red ball", "tree"]);
        let out = enc.encode(&rec.caption, None, 32).unwrap();
        let set = build_phrase_set(&rec, &out, &th, &ih, &[true, true, true]).unwrap();
        assert_eq!(set.phrase_vectors.dim(), (3, SHARED_DIM));
        assert_eq!(set.object_vectors.dim(), (3, SHARED_DIM));
        assert_eq!(set.valid, [true, true, true]);

        // budget 8 keeps start + 6 words: "a dog chases a red ball"
        let out = enc.encode(&rec.caption, None, 8).unwrap();
        let set = build_phrase_set(&rec, &out, &th, &ih, &[true, true, true]).unwrap();
        assert_eq!(set.valid, [true, true, false]);
        assert!(set.object_vectors.row(2).iter().any(|v| *v != 0.0));
        assert!(set.admissible());

        let set = build_phrase_set(&rec, &out, &th, &ih, &[false, false, false]).unwrap();
        assert!(set.is_empty() && !set.admissible());
    }

    #[test]
    fn pair_permutation_permutes_rows() {
        let (rec, enc, th, ih) = setup("a dog chases a red ball", &["a dog", "red ball"]);
        let mut swapped = rec.clone();
        swapped.phrase_spans.reverse();
        let out = enc.encode(&rec.caption, None, 32).unwrap();
        let a = build_phrase_set(&rec, &out, &th, &ih, &[true, true]).unwrap();
        let b = build_phrase_set(&swapped, &out, &th, &ih, &[true, true]).unwrap();
        assert_eq!(a.phrase_vectors.row(0), b.phrase_vectors.row(1));
        assert_eq!(a.object_vectors.row(0), b.object_vectors.row(1));
        assert_eq!(a.object_vectors.row(1), b.object_vectors.row(0));
    }
}
