//! Small fixtures shared by unit tests.

use candle_core::DType;

use crate::encoders::{build_tokenizer, DualEncoder, ModelConfig, DEFAULT_TEMPLATE};
use crate::trainer::TrainConfig;
use crate::videogen::{default_roster, Dataset, DatasetManifest, GeneratorConfig};

pub fn tiny_config() -> ModelConfig {
    let mut cfg = ModelConfig::default();
    cfg.embed_dim = 16;
    cfg.vision.image_size = 16;
    cfg.vision.patch_size = 8;
    cfg.vision.layers = 2;
    cfg.vision.heads = 2;
    cfg.text.layers = 2;
    cfg.text.heads = 2;
    cfg
}

pub fn tiny_generator() -> GeneratorConfig {
    GeneratorConfig {
        frames: 8,
        size: 20,
        ..Default::default()
    }
}

/// Dataset over the first `n_classes` roster entries.
pub fn tiny_dataset(n_classes: usize, train: usize, val: usize) -> Dataset {
    let classes = default_roster()[..n_classes].to_vec();
    Dataset::generate(DatasetManifest::uniform(classes, train, val, tiny_generator(), 11).unwrap()).unwrap()
}

/// Model whose vocabulary covers the whole roster.
pub fn tiny_model(dtype: DType) -> DualEncoder {
    let names: Vec<String> = default_roster().into_iter().map(|c| c.name).collect();
    let vocab = build_tokenizer(&names, DEFAULT_TEMPLATE, 16).unwrap();
    DualEncoder::new(tiny_config(), vocab, dtype).unwrap()
}

pub fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 4,
        frames: 2,
        crop_size: 16,
        ..Default::default()
    }
}
