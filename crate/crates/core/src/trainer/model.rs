//! Trainable parameter set and the per-batch forward/backward pass.

use ndarray::{s, Array2, ArrayView1, Axis};

use crate::archive::Archive;
use crate::corpus::{ObjectPhraseRecord, PreparedRecord};
use crate::encoders::{EncoderOutput, ProjectionHead, ToyCache, ToyEncoderConfig, ToyTextEncoder};
use crate::error::{Error, Result};
use crate::losses::{
    combined_loss, image_caption_grad, object_phrase_grad, text_contrastive_grad, LossBreakdown, LossConfig,
    LossParts, TermCounts,
};
use crate::pooling::{pool_rows, PhraseEmbeddingSet};
use crate::IMAGE_FEATURE_DIM;

/// Text encoder, the training-only pooler of the text term and both
/// projection heads. The image encoder is frozen and only seen through
/// precomputed features.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: ToyTextEncoder,
    /// Applied to both dropout views when the text term is compared in a
    /// projected space; never used at evaluation time.
    pub pooler: ProjectionHead,
    pub text_head: ProjectionHead,
    pub image_head: ProjectionHead,
}

impl Model {
    pub fn new(encoder: ToyEncoderConfig, head_hidden: usize) -> Result<Self> {
        let seed = encoder.seed;
        let encoder = ToyTextEncoder::new(encoder)?;
        let pooler = ProjectionHead::new(encoder.config.hidden, head_hidden, seed, "init-pooler")?;
        let text_head = ProjectionHead::new(encoder.config.hidden, head_hidden, seed, "init-text-head")?;
        let image_head = ProjectionHead::new(IMAGE_FEATURE_DIM, head_hidden, seed, "init-image-head")?;
        Ok(Model {
            encoder,
            pooler,
            text_head,
            image_head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Model {
            encoder: self.encoder.zeros_like(),
            pooler: self.pooler.zeros_like(),
            text_head: self.text_head.zeros_like(),
            image_head: self.image_head.zeros_like(),
        }
    }

    pub fn head_hidden(&self) -> usize {
        self.text_head.hidden_width()
    }

    /// Parameter groups in a fixed order: encoder, pooler, text head, image head.
    pub fn param_groups(&self) -> [(&'static str, Vec<&[f64]>); 4] {
        [
            ("encoder", self.encoder.param_slices()),
            ("pooler", self.pooler.param_slices()),
            ("text_head", self.text_head.param_slices()),
            ("image_head", self.image_head.param_slices()),
        ]
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.encoder.param_slices();
        v.extend(self.pooler.param_slices());
        v.extend(self.text_head.param_slices());
        v.extend(self.image_head.param_slices());
        v
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.encoder.param_slices_mut();
        v.extend(self.pooler.param_slices_mut());
        v.extend(self.text_head.param_slices_mut());
        v.extend(self.image_head.param_slices_mut());
        v
    }

    pub fn write_arrays(&self, archive: &mut Archive) {
        self.encoder.write_arrays(archive);
        self.pooler.write_arrays("pooler", archive);
        self.text_head.write_arrays("text_head", archive);
        self.image_head.write_arrays("image_head", archive);
    }

    pub fn read_arrays(encoder: ToyEncoderConfig, head_hidden: usize, archive: &mut Archive) -> Result<Self> {
        let hidden = encoder.hidden;
        let encoder = ToyTextEncoder::read_arrays(encoder, archive)?;
        let pooler = ProjectionHead::read_arrays(hidden, head_hidden, "pooler", archive)?;
        let text_head = ProjectionHead::read_arrays(hidden, head_hidden, "text_head", archive)?;
        let image_head = ProjectionHead::read_arrays(IMAGE_FEATURE_DIM, head_hidden, "image_head", archive)?;
        Ok(Model {
            encoder,
            pooler,
            text_head,
            image_head,
        })
    }
}

/// Settings of one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSettings {
    pub loss: LossConfig,
    pub max_tokens: usize,
    /// Compare pooled (rather than raw) sentence embeddings in the text term.
    pub project_text_text: bool,
}

#[derive(Debug, Clone)]
pub enum BatchData<'a> {
    Text(Vec<&'a str>),
    Multimodal(Vec<(&'a ObjectPhraseRecord, &'a PreparedRecord)>),
}

/// A batch together with the dropout seeds of its two views per item.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub data: BatchData<'a>,
    pub view_seeds: Vec<(u64, u64)>,
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        match &self.data {
            BatchData::Text(t) => t.len(),
            BatchData::Multimodal(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn texts(&self) -> Vec<&str> {
        match &self.data {
            BatchData::Text(t) => t.clone(),
            BatchData::Multimodal(m) => m.iter().map(|(r, _)| r.caption.as_str()).collect(),
        }
    }
}

struct View {
    out: EncoderOutput,
    cache: ToyCache,
    d_tokens: Array2<f64>,
}

fn stack_rows<'r>(rows: impl Iterator<Item = ArrayView1<'r, f64>>, width: usize) -> Array2<f64> {
    let rows: Vec<ArrayView1<f64>> = rows.collect();
    let mut m = Array2::zeros((rows.len(), width));
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).assign(r);
    }
    m
}

/// Loss of one batch and, when `want_grad`, gradients for every parameter.
///
/// Text batches contribute only the text term. Multimodal batches contribute
/// all three; the object-phrase term uses only admitted records and is zero
/// with count 0 when there are none.
pub fn batch_loss(
    model: &Model,
    batch: &Batch,
    settings: &StepSettings,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Model>)> {
    let n = batch.len();
    if batch.view_seeds.len() != n {
        return Err(Error::InvalidArgument("one pair of view seeds per batch item required".into()));
    }
    let texts = batch.texts();
    let h = model.encoder.config.hidden;
    let cfg = &settings.loss;

    let mut views_a = Vec::with_capacity(n);
    let mut views_b = Vec::with_capacity(n);
    for (text, &(sa, sb)) in texts.iter().zip(&batch.view_seeds) {
        for (seed, sink) in [(sa, &mut views_a), (sb, &mut views_b)] {
            let (out, cache) = model.encoder.forward(text, Some(seed), settings.max_tokens)?;
            let d_tokens = Array2::zeros(out.token_embeddings.raw_dim());
            sink.push(View { out, cache, d_tokens });
        }
    }
    let mut grads = want_grad.then(|| model.zeros_like());

    // Text term over the two dropout views.
    let anchors = stack_rows(views_a.iter().map(|v| v.out.sentence_embedding.view()), h);
    let positives = stack_rows(views_b.iter().map(|v| v.out.sentence_embedding.view()), h);
    let text_loss = if settings.project_text_text {
        let (pa, ca) = model.pooler.forward(anchors.view())?;
        let (pp, cp) = model.pooler.forward(positives.view())?;
        let (l, da, dp) = text_contrastive_grad(pa.view(), pp.view(), cfg.tau, cfg.text_denominator)?;
        if let Some(g) = grads.as_mut() {
            let da = model.pooler.backward(anchors.view(), &ca, &da, &mut g.pooler, true).unwrap();
            let dp = model.pooler.backward(positives.view(), &cp, &dp, &mut g.pooler, true).unwrap();
            add_sentence_grads(&mut views_a, &da);
            add_sentence_grads(&mut views_b, &dp);
        }
        l
    } else {
        let (l, da, dp) = text_contrastive_grad(anchors.view(), positives.view(), cfg.tau, cfg.text_denominator)?;
        if grads.is_some() {
            add_sentence_grads(&mut views_a, &da);
            add_sentence_grads(&mut views_b, &dp);
        }
        l
    };

    let mut parts = LossParts {
        text: text_loss,
        img_cap: 0.0,
        obj_phrase: 0.0,
        counts: TermCounts {
            text: n,
            ..TermCounts::default()
        },
    };

    if let BatchData::Multimodal(items) = &batch.data {
        // Text head rows: captions (view A sentence slot) then pooled phrases.
        let mut text_rows = vec![anchors.clone()];
        let mut phrase_slots = Vec::new(); // (item, k, span, row)
        let mut next_row = n;
        let mut admitted_items = Vec::new();
        for (i, (rec, prep)) in items.iter().enumerate() {
            if !prep.admitted {
                continue;
            }
            admitted_items.push(i);
            for k in 0..rec.num_pairs() {
                let span = prep.token_spans[k];
                if prep.validity[k] && span.1 <= views_a[i].out.num_tokens() {
                    phrase_slots.push((i, k, span, next_row));
                    next_row += 1;
                }
            }
        }
        let mut pooled = Array2::zeros((phrase_slots.len(), h));
        for (r, &(i, _, span, _)) in phrase_slots.iter().enumerate() {
            pooled.row_mut(r).assign(&pool_rows(views_a[i].out.token_embeddings.view(), span)?);
        }
        text_rows.push(pooled);
        let text_in = ndarray::concatenate(Axis(0), &text_rows.iter().map(|a| a.view()).collect::<Vec<_>>())
            .expect("equal widths");
        let (text_proj, text_cache) = model.text_head.forward(text_in.view())?;

        // Image head rows: full images then objects of admitted records.
        let object_rows: usize = admitted_items.iter().map(|&i| items[i].0.num_pairs()).sum();
        let mut image_in = Array2::zeros((n + object_rows, IMAGE_FEATURE_DIM));
        let mut object_base = Vec::with_capacity(admitted_items.len());
        let mut row = n;
        for (i, (rec, _)) in items.iter().enumerate() {
            image_in.row_mut(i).assign(&ArrayView1::from(rec.image_feature.as_slice()));
        }
        for &i in &admitted_items {
            let rec = items[i].0;
            object_base.push(row);
            for span in &rec.phrase_spans {
                image_in
                    .row_mut(row)
                    .assign(&ArrayView1::from(rec.object_features[span.object_index].as_slice()));
                row += 1;
            }
        }
        let (image_proj, image_cache) = model.image_head.forward(image_in.view())?;

        let (img_cap, d_caps, d_imgs) =
            image_caption_grad(text_proj.slice(s![..n, ..]), image_proj.slice(s![..n, ..]), cfg.tau_prime)?;

        let mut sets = Vec::with_capacity(admitted_items.len());
        for (a, &i) in admitted_items.iter().enumerate() {
            let k = items[i].0.num_pairs();
            let mut phrases = Array2::zeros((k, text_proj.ncols()));
            let mut valid = vec![false; k];
            for &(_, kk, _, r) in phrase_slots.iter().filter(|s| s.0 == i) {
                phrases.row_mut(kk).assign(&text_proj.row(r));
                valid[kk] = true;
            }
            let objects = image_proj.slice(s![object_base[a]..object_base[a] + k, ..]).to_owned();
            sets.push(PhraseEmbeddingSet::new(phrases, objects, valid)?);
        }
        let (obj_phrase, admitted, set_grads) = object_phrase_grad(&sets, cfg.tau, cfg.phrase_normalization)?;

        parts.img_cap = img_cap;
        parts.obj_phrase = obj_phrase;
        parts.counts.img_cap = n;
        parts.counts.obj_phrase = admitted;

        if let Some(g) = grads.as_mut() {
            let mut d_text = Array2::zeros(text_proj.raw_dim());
            d_text.slice_mut(s![..n, ..]).assign(&(&d_caps * cfg.alpha));
            let mut d_image = Array2::zeros(image_proj.raw_dim());
            d_image.slice_mut(s![..n, ..]).assign(&(&d_imgs * cfg.alpha));
            for (a, (&i, sg)) in admitted_items.iter().zip(&set_grads).enumerate() {
                let Some(sg) = sg else { continue };
                for &(_, kk, _, r) in phrase_slots.iter().filter(|s| s.0 == i) {
                    let mut row = d_text.row_mut(r);
                    row.scaled_add(cfg.beta, &sg.d_phrases.row(kk));
                }
                let k = sg.d_objects.nrows();
                let mut block = d_image.slice_mut(s![object_base[a]..object_base[a] + k, ..]);
                block.scaled_add(cfg.beta, &sg.d_objects);
            }
            let d_text_in = model
                .text_head
                .backward(text_in.view(), &text_cache, &d_text, &mut g.text_head, true)
                .unwrap();
            model
                .image_head
                .backward(image_in.view(), &image_cache, &d_image, &mut g.image_head, false);

            add_sentence_grads(&mut views_a, &d_text_in.slice(s![..n, ..]).to_owned());
            for &(i, _, (start, end), r) in &phrase_slots {
                let share = &d_text_in.row(r) / (end - start) as f64;
                let mut block = views_a[i].d_tokens.slice_mut(s![start..end, ..]);
                block += &share;
            }
        }
    }

    let breakdown = combined_loss(parts, cfg)?;

    if let Some(g) = grads.as_mut() {
        for v in views_a.iter().chain(&views_b) {
            model.encoder.backward(&v.cache, &v.d_tokens, &mut g.encoder);
        }
    }
    Ok((breakdown, grads))
}

fn add_sentence_grads(views: &mut [View], d: &Array2<f64>) {
    for (v, row) in views.iter_mut().zip(d.rows()) {
        let mut slot = v.d_tokens.row_mut(0);
        slot += &row;
    }
}
