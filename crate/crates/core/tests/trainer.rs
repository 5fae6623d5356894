mod common;

use common::{small_config, small_data, small_model};
use mmcse::archive::Archive;
use mmcse::corpus::PreparedRecord;
use mmcse::trainer::{batch_loss, train, Batch, BatchData, Mixing, StepSettings, Trainer};
use mmcse::Error;

fn losses(t: &Trainer) -> Vec<f64> {
    t.state().loss_history.iter().map(|l| l.loss.combined).collect()
}

#[test]
fn zero_steps_is_a_no_op() {
    let d = small_data(1);
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(1);
    let (out, state) = train(&d.texts, &d.records, &d.dev, model.clone(), small_config(0), Some(dir.path())).unwrap();
    assert_eq!(out, model);
    assert_eq!(state.step, 0);
    assert!(state.loss_history.is_empty() && state.eval_history.is_empty());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn same_seed_same_history() {
    let d = small_data(2);
    let run = || train(&d.texts, &d.records, &d.dev, small_model(3), small_config(12), None).unwrap();
    let (m1, s1) = run();
    let (m2, s2) = run();
    assert_eq!(s1, s2);
    assert_eq!(m1, m2);
}

#[test]
fn restore_continues_bit_identically() {
    let d = small_data(4);
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("mid.ckpt");

    let mut straight = Trainer::new(&d.texts, &d.records, &d.dev, small_model(5), small_config(20)).unwrap();
    for _ in 0..10 {
        straight.step().unwrap();
    }
    straight.checkpoint(&ckpt).unwrap();
    straight.run().unwrap();

    let mut resumed = Trainer::restore(&ckpt, &d.texts, &d.records, &d.dev).unwrap();
    assert_eq!(resumed.state().step, 10);
    resumed.run().unwrap();
    assert_eq!(losses(&resumed), losses(&straight));
    assert_eq!(resumed.state(), straight.state());
    assert_eq!(resumed.model(), straight.model());
}

#[test]
fn restore_rejects_other_encoder_kind() {
    let d = small_data(6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    let t = Trainer::new(&d.texts, &d.records, &d.dev, small_model(6), small_config(1)).unwrap();
    let mut archive = t.to_archive();
    archive.manifest["encoder_kind"] = "bert".into();
    archive.save(&path).unwrap();
    let err = Trainer::restore(&path, &d.texts, &d.records, &d.dev).err().unwrap();
    assert!(matches!(&err, Error::Checkpoint(m) if m.contains("encoder kind mismatch")), "{err}");
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let d = small_data(7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    let t = Trainer::new(&d.texts, &d.records, &d.dev, small_model(7), small_config(1)).unwrap();
    t.checkpoint(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let err = Trainer::restore(&path, &d.texts, &d.records, &d.dev).err().unwrap();
    assert!(err.to_string().contains("integrity"), "{err}");
    assert!(Archive::load(&path).is_err());
}

#[test]
fn image_features_stay_frozen() {
    let d = small_data(8);
    let before = d.records.clone();
    train(&d.texts, &d.records, &d.dev, small_model(8), small_config(6), None).unwrap();
    assert_eq!(before, d.records);
}

fn changed_groups(before: &mmcse::trainer::Model, after: &mmcse::trainer::Model) -> Vec<&'static str> {
    before
        .param_groups()
        .iter()
        .zip(after.param_groups().iter())
        .filter(|((_, a), (_, b))| a != b)
        .map(|((name, _), _)| *name)
        .collect()
}

#[test]
fn one_step_updates_only_trainable_groups() {
    let d = small_data(9);
    let model = small_model(9);

    let mut cfg = small_config(1);
    cfg.mixing = Mixing::MultimodalOnly;
    let (after, _) = train(&d.texts, &d.records, &d.dev, model.clone(), cfg.clone(), None).unwrap();
    assert_eq!(changed_groups(&model, &after), ["encoder", "pooler", "text_head", "image_head"]);

    // alternate mixing starts with a text batch: no image-side update
    cfg.mixing = Mixing::Alternate;
    let (after, _) = train(&d.texts, &d.records, &d.dev, model.clone(), cfg.clone(), None).unwrap();
    assert_eq!(changed_groups(&model, &after), ["encoder", "pooler"]);

    cfg.project_text_text = false;
    let (after, _) = train(&d.texts, &d.records, &d.dev, model.clone(), cfg, None).unwrap();
    assert_eq!(changed_groups(&model, &after), ["encoder"]);
}

#[test]
fn batch_without_admitted_records_has_no_phrase_gradient() {
    let d = small_data(10);
    let singles: Vec<_> = d
        .records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            let k = r.phrase_spans.len();
            r.phrase_spans.truncate(1);
            r.object_features.truncate(1);
            assert!(k >= 1);
            r
        })
        .take(6)
        .collect();
    let prepared: Vec<_> = singles.iter().map(|r| PreparedRecord::new(r, 32).unwrap()).collect();
    let batch = Batch {
        data: BatchData::Multimodal(singles.iter().zip(&prepared).collect()),
        view_seeds: (0..6).map(|i| (i, 100 + i)).collect(),
    };
    let model = small_model(10);
    let mut settings = StepSettings {
        loss: Default::default(),
        max_tokens: 32,
        project_text_text: true,
    };
    let (with_beta, g1) = batch_loss(&model, &batch, &settings, true).unwrap();
    assert_eq!(with_beta.obj_phrase_loss, 0.0);
    assert_eq!(with_beta.counts.obj_phrase, 0);
    settings.loss.beta = 0.0;
    let (_, g0) = batch_loss(&model, &batch, &settings, true).unwrap();
    assert_eq!(g1.unwrap(), g0.unwrap());
}

#[test]
fn dev_evaluations_follow_eval_every() {
    let d = small_data(11);
    let mut cfg = small_config(260);
    cfg.eval_every = 125;
    let (_, state) = train(&d.texts, &d.records, &d.dev, small_model(11), cfg, None).unwrap();
    let steps: Vec<u64> = state.eval_history.iter().map(|e| e.0).collect();
    assert_eq!(steps, [125, 250]);
    let best = state.eval_history.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(state.best_dev_score, Some(best));
}

#[test]
fn best_checkpoint_written_on_improvement() {
    let d = small_data(12);
    let dir = tempfile::tempdir().unwrap();
    let (_, state) = train(&d.texts, &d.records, &d.dev, small_model(12), small_config(10), Some(dir.path())).unwrap();
    let path = state.best_checkpoint_path.clone().unwrap();
    assert!(path.exists());
    let model = mmcse::trainer::load_model(&path).unwrap();
    let score = mmcse::trainer::evaluate_dev(&model.encoder, &d.dev, 32).unwrap();
    assert_eq!(Some(score), state.best_dev_score);
}

#[test]
fn non_finite_loss_aborts_with_batch_id() {
    let d = small_data(13);
    let mut model = small_model(13);
    model.encoder.w_self[[0, 0]] = f64::NAN;
    let mut t = Trainer::new(&d.texts, &d.records, &d.dev, model, small_config(3)).unwrap();
    let err = t.step().unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert!(err.to_string().contains("step 1, Text batch 0"), "{err}");
}

#[test]
fn empty_corpora_rejected() {
    let d = small_data(14);
    let err = Trainer::new(&[], &d.records, &d.dev, small_model(14), small_config(1)).err().unwrap();
    assert!(matches!(err, Error::InvalidArgument(_)));
    let err = Trainer::new(&d.texts, &[], &d.dev, small_model(14), small_config(1)).err().unwrap();
    assert!(matches!(err, Error::InvalidArgument(_)));
}
