#![allow(dead_code)]

use mmcse::corpus::{ObjectPhraseRecord, TextExample};
use mmcse::encoders::ToyEncoderConfig;
use mmcse::evaluation::StsExample;
use mmcse::synth::{generate_multimodal, generate_sts, generate_texts, SynthSpec};
use mmcse::trainer::{Model, TrainConfig};

pub struct Data {
    pub texts: Vec<TextExample>,
    pub records: Vec<ObjectPhraseRecord>,
    pub dev: Vec<StsExample>,
}

pub fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        seed,
        num_records: 48,
        num_texts: 64,
        num_dev: 40,
        num_test: 40,
        ..SynthSpec::default()
    }
}

pub fn small_data(seed: u64) -> Data {
    let spec = small_spec(seed);
    Data {
        texts: generate_texts(&spec).unwrap(),
        records: generate_multimodal(&spec).unwrap(),
        dev: generate_sts(&spec).unwrap().0,
    }
}

pub fn small_model(seed: u64) -> Model {
    let cfg = ToyEncoderConfig {
        hidden: 16,
        vocab_size: 512,
        dropout: 0.1,
        seed,
    };
    Model::new(cfg, 16).unwrap()
}

pub fn small_config(max_steps: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(0.05);
    cfg.batch_size = 8;
    cfg.eval_every = 5;
    cfg.max_steps = max_steps;
    cfg.seed = 7;
    cfg
}
