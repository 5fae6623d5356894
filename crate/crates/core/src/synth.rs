//! Deterministic synthetic corpora with planted object-phrase structure.
//!
//! Each vocabulary entry is a concept with one or more surface forms
//! (`"dog|puppy"`). A concept owns a Gaussian code in feature space; an
//! object feature is its concept code plus noise and an image feature is the
//! normalized sum of its object codes, its scene code and a few distractor
//! codes. Captions and sentences mention concepts through randomly chosen
//! surface forms padded with frequent filler words, so synonyms only become
//! related through the image side.
//!
//! Concepts are grouped into scenes and items draw most of their concepts
//! from one scene. Whole-image alignment then tends to conflate concepts of
//! the same scene; telling them apart needs the object-level pairs.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_corpus, write_text_corpus, ObjectPhraseRecord, PhraseSpan, TextExample};
use crate::error::{Error, Result};
use crate::evaluation::{write_task, StsExample};
use crate::rng::substream;
use crate::IMAGE_FEATURE_DIM;

/// Gold similarity scale maximum.
pub const GOLD_MAX: f64 = 5.0;

const DEFAULT_VOCAB: &[&str] = &[
    "dog|puppy", "cat|kitten", "car|automobile", "bicycle|bike", "boat|ship", "horse|pony",
    "tree|oak", "flower|blossom", "ball|sphere", "hat|cap", "shirt|tunic", "table|desk",
    "chair|stool", "house|cottage", "road|street", "river|stream", "mountain|peak", "beach|shore",
    "child|kid", "man|gentleman", "woman|lady", "bird|sparrow", "cup|mug", "book|novel",
    "phone|telephone", "guitar|banjo", "kite|glider", "bench|pew", "bridge|overpass", "cloud|mist",
    "fence|railing", "window|pane", "door|gate", "bag|satchel", "shoe|sneaker", "lamp|lantern",
    "train|locomotive", "bus|coach", "truck|lorry", "plane|aircraft", "rock|stone", "grass|lawn",
    "snow|frost", "umbrella|parasol", "sign|placard", "clock|timepiece", "cake|pastry", "apple|fruit",
];

const DEFAULT_FILLERS: &[&str] = &[
    "with", "and", "near", "beside", "under", "over", "behind", "while", "on", "in", "at", "by",
    "there", "is", "are", "seen",
];

const DETERMINERS: &[&str] = &["a", "the", "one"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    /// Concepts; surface forms of one concept are separated by `|`.
    pub vocab: Vec<String>,
    pub fillers: Vec<String>,
    pub num_records: usize,
    pub num_texts: usize,
    pub num_dev: usize,
    pub num_test: usize,
    /// Unnormalized weights of 1..=6 pairs per record.
    pub pairs_per_record: Vec<f64>,
    pub feature_dim: usize,
    /// Standard deviation of the noise added to object and image features.
    pub noise_scale: f64,
    /// Unmentioned concepts mixed into each image feature.
    pub distractors: usize,
    /// Weight of the mentioned objects' codes inside the image feature,
    /// relative to each distractor.
    pub object_salience: f64,
    /// Concepts per co-occurrence scene; 0 disables scenes. Scene `s` owns
    /// concepts `s * scene_size .. (s + 1) * scene_size`.
    pub scene_size: usize,
    /// Probability that each mentioned concept comes from the item's scene.
    pub scene_purity: f64,
    /// Decimal places kept in written features.
    pub feature_decimals: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            vocab: DEFAULT_VOCAB.iter().map(|s| s.to_string()).collect(),
            fillers: DEFAULT_FILLERS.iter().map(|s| s.to_string()).collect(),
            num_records: 2000,
            num_texts: 5000,
            num_dev: 200,
            num_test: 200,
            pairs_per_record: vec![0.1, 0.1, 0.2, 0.25, 0.2, 0.15],
            feature_dim: IMAGE_FEATURE_DIM,
            noise_scale: 0.5,
            distractors: 1,
            object_salience: 1.0,
            scene_size: 8,
            scene_purity: 0.9,
            feature_decimals: 4,
        }
    }
}

impl SynthSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SynthSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.vocab.is_empty() {
            return bad("vocab is empty".into());
        }
        for entry in &self.vocab {
            if entry.split('|').any(|w| w.is_empty() || !w.chars().all(char::is_alphanumeric)) {
                return bad(format!("vocab entry {entry:?} must be alphanumeric words separated by '|'"));
            }
        }
        if self.fillers.iter().any(|w| w.is_empty() || !w.chars().all(char::is_alphanumeric)) {
            return bad("fillers must be non-empty alphanumeric words".into());
        }
        if self.pairs_per_record.len() != 6
            || self.pairs_per_record.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.pairs_per_record.iter().sum::<f64>() <= 0.0
        {
            return bad("pairs_per_record must be 6 non-negative weights for 1..=6 pairs, not all zero".into());
        }
        let max_k = self.pairs_per_record.iter().rposition(|w| *w > 0.0).unwrap() + 1;
        // STS pairs may need 8 distinct concepts
        if self.vocab.len() < max_k.max(8) {
            return bad(format!("vocab needs at least {} concepts", max_k.max(8)));
        }
        if self.feature_dim != IMAGE_FEATURE_DIM {
            return bad(format!("feature_dim must be {IMAGE_FEATURE_DIM}, got {}", self.feature_dim));
        }
        if !(0.0..=1.0).contains(&self.scene_purity) {
            return bad(format!("scene_purity must lie in [0, 1], got {}", self.scene_purity));
        }
        if self.scene_size > self.vocab.len() {
            return bad(format!("scene_size {} exceeds the vocab size", self.scene_size));
        }
        if !(self.object_salience.is_finite() && self.object_salience > 0.0) {
            return bad(format!("object_salience must be positive, got {}", self.object_salience));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad(format!("noise_scale must be non-negative, got {}", self.noise_scale));
        }
        Ok(())
    }

    fn forms(&self, concept: usize) -> Vec<&str> {
        self.vocab[concept].split('|').collect()
    }

    /// Expected pairs per record under `pairs_per_record`.
    pub fn expected_pairs(&self) -> f64 {
        let total: f64 = self.pairs_per_record.iter().sum();
        self.pairs_per_record.iter().enumerate().map(|(i, w)| (i + 1) as f64 * w).sum::<f64>() / total
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Code vector of each concept.
pub fn concept_codes(spec: &SynthSpec) -> Vec<Vec<f64>> {
    (0..spec.vocab.len())
        .map(|c| gaussian(&mut substream(spec.seed, "concept-code", &[c as u64]), spec.feature_dim))
        .collect()
}

fn distractor_code(spec: &SynthSpec, d: u64) -> Vec<f64> {
    gaussian(&mut substream(spec.seed, "distractor-code", &[d]), spec.feature_dim)
}

fn round_to(x: f64, decimals: u32) -> f64 {
    let s = 10f64.powi(decimals as i32);
    (x * s).round() / s
}

/// A rendered sentence and the character span of each concept mention.
struct Realized {
    text: String,
    spans: Vec<(String, usize, usize)>,
}

fn realize(spec: &SynthSpec, concepts: &[usize], rng: &mut ChaCha8Rng) -> Realized {
    let mut words: Vec<String> = Vec::new();
    let mut marks = Vec::new();
    let filler = |rng: &mut ChaCha8Rng| spec.fillers.choose(rng).cloned();
    for _ in 0..rng.random_range(0..=1) {
        words.extend(filler(rng));
    }
    for (i, &c) in concepts.iter().enumerate() {
        if i > 0 {
            for _ in 0..rng.random_range(1..=2) {
                words.extend(filler(rng));
            }
        }
        let start = words.len();
        if rng.random_bool(0.5) {
            words.push(DETERMINERS.choose(rng).unwrap().to_string());
        }
        words.push(spec.forms(c).choose(rng).unwrap().to_string());
        marks.push((start, words.len()));
    }
    for _ in 0..rng.random_range(0..=1) {
        words.extend(filler(rng));
    }

    // char offset of each word in the space-joined text
    let mut offsets = Vec::with_capacity(words.len() + 1);
    let mut pos = 0;
    for w in &words {
        offsets.push(pos);
        pos += w.chars().count() + 1;
    }
    let text = words.join(" ");
    let spans = marks
        .into_iter()
        .map(|(a, b)| {
            let start = offsets[a];
            let end = offsets[b - 1] + words[b - 1].chars().count();
            (words[a..b].join(" "), start, end)
        })
        .collect();
    Realized { text, spans }
}

fn num_scenes(spec: &SynthSpec) -> usize {
    spec.vocab.len().checked_div(spec.scene_size).unwrap_or(0)
}

/// `k` distinct concepts, drawn mostly from one scene when scenes are on.
/// Returns the concepts and the scene.
fn draw_concepts(spec: &SynthSpec, k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Option<usize>) {
    let mut all: Vec<usize> = (0..spec.vocab.len()).collect();
    all.shuffle(rng);
    let scenes = num_scenes(spec);
    if scenes == 0 {
        all.truncate(k);
        return (all, None);
    }
    let scene = rng.random_range(0..scenes);
    let owned = scene * spec.scene_size..(scene + 1) * spec.scene_size;
    let (mut inside, mut outside): (Vec<usize>, Vec<usize>) = all.into_iter().partition(|c| owned.contains(c));
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let from_scene = rng.random_bool(spec.scene_purity);
        let c = match (from_scene, inside.is_empty(), outside.is_empty()) {
            (true, false, _) | (false, false, true) => inside.pop(),
            _ => outside.pop(),
        };
        out.push(c.expect("vocab holds at least k concepts"));
    }
    (out, Some(scene))
}

/// One record per index; record `i` depends only on `(seed, i)`.
pub fn generate_multimodal(spec: &SynthSpec) -> Result<Vec<ObjectPhraseRecord>> {
    spec.validate()?;
    let codes = concept_codes(spec);
    let pairs = WeightedIndex::new(&spec.pairs_per_record).expect("validated weights");
    (0..spec.num_records)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(spec.seed, "record", &[i as u64]);
            let k = pairs.sample(&mut rng) + 1;
            let (concepts, scene) = draw_concepts(spec, k, &mut rng);
            let sentence = realize(spec, &concepts, &mut rng);
            let dim = spec.feature_dim;

            let mut objects = Vec::with_capacity(k);
            let mut image = vec![0.0; dim];
            for &c in &concepts {
                let noise = gaussian(&mut rng, dim);
                let obj: Vec<f64> = codes[c].iter().zip(&noise).map(|(v, n)| v + spec.noise_scale * n).collect();
                image.iter_mut().zip(&codes[c]).for_each(|(a, v)| *a += spec.object_salience * v);
                objects.push(obj);
            }
            for _ in 0..spec.distractors {
                let d = rng.random_range(0..256u64);
                image.iter_mut().zip(distractor_code(spec, d)).for_each(|(a, v)| *a += v);
            }
            if let Some(sc) = scene {
                let code = gaussian(&mut substream(spec.seed, "scene-code", &[sc as u64]), dim);
                image.iter_mut().zip(code).for_each(|(a, v)| *a += v);
            }
            let extra = spec.distractors + usize::from(scene.is_some());
            let norm = (k as f64 * spec.object_salience.powi(2) + extra as f64).sqrt();
            let noise = gaussian(&mut rng, dim);
            let image = image
                .iter()
                .zip(&noise)
                .map(|(v, n)| round_to(v / norm + spec.noise_scale * n, spec.feature_decimals))
                .collect();
            let objects = objects
                .into_iter()
                .map(|o| o.into_iter().map(|v| round_to(v, spec.feature_decimals)).collect())
                .collect();
            let spans = sentence
                .spans
                .into_iter()
                .enumerate()
                .map(|(object_index, (text, char_start, char_end))| PhraseSpan {
                    text,
                    char_start,
                    char_end,
                    object_index,
                })
                .collect();
            ObjectPhraseRecord::new(format!("synth-{i:06}"), sentence.text, image, objects, spans)
        })
        .collect()
}

fn sentence_size(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=4)
}

pub fn generate_texts(spec: &SynthSpec) -> Result<Vec<TextExample>> {
    spec.validate()?;
    (0..spec.num_texts)
        .map(|i| {
            let mut rng = substream(spec.seed, "text", &[i as u64]);
            let k = sentence_size(&mut rng);
            let (concepts, _) = draw_concepts(spec, k, &mut rng);
            TextExample::new(realize(spec, &concepts, &mut rng).text)
        })
        .collect()
}

/// Gold score of two concept sets: `GOLD_MAX` times their Jaccard overlap.
pub fn concept_gold(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|c| b.contains(c)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return GOLD_MAX;
    }
    GOLD_MAX * inter as f64 / union as f64
}

fn sts_split(spec: &SynthSpec, stream: &str, n: usize) -> Vec<StsExample> {
    (0..n)
        .map(|i| {
            let mut rng = substream(spec.seed, stream, &[i as u64]);
            let (na, nb) = (sentence_size(&mut rng), sentence_size(&mut rng));
            let overlap = rng.random_range(0..=na.min(nb));
            let (pool, _) = draw_concepts(spec, na + nb - overlap, &mut rng);
            let a = pool[..na].to_vec();
            let mut b = pool[..overlap].to_vec();
            b.extend(&pool[na..]);
            b.shuffle(&mut rng);
            StsExample {
                sentence_a: realize(spec, &a, &mut rng).text,
                sentence_b: realize(spec, &b, &mut rng).text,
                gold: concept_gold(&a, &b),
            }
        })
        .collect()
}

/// Dev and test STS sets.
pub fn generate_sts(spec: &SynthSpec) -> Result<(Vec<StsExample>, Vec<StsExample>)> {
    spec.validate()?;
    Ok((sts_split(spec, "sts-dev", spec.num_dev), sts_split(spec, "sts-test", spec.num_test)))
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub multimodal: usize,
    pub texts: usize,
    pub dev: usize,
    pub test: usize,
    pub mean_pairs_per_record: f64,
}

/// Write `multimodal.jsonl`, `text.txt`, `dev.tsv` and `tasks/synth-sts.tsv`.
pub fn write_all(spec: &SynthSpec, out: impl AsRef<Path>) -> Result<SynthSummary> {
    let out = out.as_ref();
    let tasks = out.join("tasks");
    std::fs::create_dir_all(&tasks).map_err(|e| Error::io(&tasks, e))?;
    let records = generate_multimodal(spec)?;
    let texts = generate_texts(spec)?;
    let (dev, test) = generate_sts(spec)?;
    write_corpus(out.join("multimodal.jsonl"), &records)?;
    write_text_corpus(out.join("text.txt"), &texts)?;
    write_task(out.join("dev.tsv"), &dev)?;
    write_task(tasks.join("synth-sts.tsv"), &test)?;
    let pairs: usize = records.iter().map(|r| r.num_pairs()).sum();
    Ok(SynthSummary {
        multimodal: records.len(),
        texts: texts.len(),
        dev: dev.len(),
        test: test.len(),
        mean_pairs_per_record: pairs as f64 / records.len().max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{char_slice, filter_single_pair};
    use crate::losses::cosine_sim;

    fn small(num_records: usize) -> SynthSpec {
        SynthSpec {
            num_records,
            num_texts: 50,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn all_single_pair_is_fully_filtered() {
        let spec = SynthSpec {
            pairs_per_record: vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            ..small(40)
        };
        let recs = generate_multimodal(&spec).unwrap();
        assert!(recs.iter().all(|r| r.num_pairs() == 1));
        let (kept, stats) = filter_single_pair(&recs);
        assert!(kept.is_empty());
        assert_eq!(stats.num_excluded_single_pair, 40);
    }

    #[test]
    fn noiseless_objects_are_recovered_by_nearest_code() {
        let spec = SynthSpec {
            noise_scale: 0.0,
            ..small(100)
        };
        let codes = concept_codes(&spec);
        let lookup = |word: &str| spec.vocab.iter().position(|e| e.split('|').any(|w| w == word)).unwrap();
        let mut total = 0;
        for rec in generate_multimodal(&spec).unwrap() {
            for span in &rec.phrase_spans {
                let word = span.text.split(' ').next_back().unwrap();
                let code = &codes[lookup(word)];
                let best = (0..rec.object_features.len())
                    .max_by(|&a, &b| {
                        let sa = cosine_sim(code, &rec.object_features[a]).unwrap();
                        let sb = cosine_sim(code, &rec.object_features[b]).unwrap();
                        sa.total_cmp(&sb)
                    })
                    .unwrap();
                assert_eq!(best, span.object_index);
                total += 1;
            }
        }
        assert!(total > 200);
    }

    #[test]
    fn same_seed_same_corpus() {
        let spec = small(30);
        assert_eq!(generate_multimodal(&spec).unwrap(), generate_multimodal(&spec).unwrap());
        assert_eq!(generate_texts(&spec).unwrap(), generate_texts(&spec).unwrap());
        let other = SynthSpec { seed: 1, ..spec.clone() };
        assert_ne!(generate_texts(&spec).unwrap(), generate_texts(&other).unwrap());
    }

    #[test]
    fn records_validate_and_spans_slice_exactly() {
        for rec in generate_multimodal(&small(200)).unwrap() {
            rec.validate().unwrap();
            for s in &rec.phrase_spans {
                assert_eq!(char_slice(&rec.caption, s.char_start, s.char_end), Some(s.text.as_str()));
            }
        }
    }

    #[test]
    fn mean_pairs_matches_distribution() {
        let spec = small(1000);
        let recs = generate_multimodal(&spec).unwrap();
        let mean = recs.iter().map(|r| r.num_pairs()).sum::<usize>() as f64 / recs.len() as f64;
        let want = spec.expected_pairs();
        assert!((mean - want).abs() / want < 0.05, "{mean} vs {want}");
    }

    #[test]
    fn gold_endpoints_and_spread() {
        assert_eq!(concept_gold(&[3, 1], &[1, 3]), GOLD_MAX);
        assert_eq!(concept_gold(&[0, 1], &[2, 3]), 0.0);
        let (dev, test) = generate_sts(&SynthSpec::default()).unwrap();
        assert_eq!(dev.len(), 200);
        assert_eq!(test.len(), 200);
        let mut golds: Vec<f64> = dev.iter().map(|e| e.gold).collect();
        golds.sort_by(f64::total_cmp);
        golds.dedup();
        assert!(golds.len() >= 5, "{golds:?}");
        assert_eq!(golds[0], 0.0);
        assert_eq!(*golds.last().unwrap(), GOLD_MAX);
    }

    #[test]
    fn empty_vocab_rejected() {
        let spec = SynthSpec { vocab: vec![], ..small(1) };
        assert!(matches!(generate_multimodal(&spec), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn toml_overrides_defaults() {
        let spec = SynthSpec::from_toml_str("num_records = 7\nnoise_scale = 0.0\n").unwrap();
        assert_eq!(spec.num_records, 7);
        assert_eq!(spec.num_texts, 5000);
        assert!(SynthSpec::from_toml_str("bogus = 1").is_err());
    }
}
