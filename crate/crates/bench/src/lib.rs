//! Fixtures shared by the benchmark suites.

use candle_core::{DType, Device, Tensor};
use vclip_core::encoders::{build_tokenizer, DEFAULT_TEMPLATE};
use vclip_core::videogen::{default_roster, GeneratorConfig};
use vclip_core::{Dataset, DatasetManifest, DualEncoder, ModelConfig, PromptConfig};

/// Desk-scale model over the default roster: width 32, 24-pixel crops, two layers per tower.
pub fn desk_model(prompts: bool) -> DualEncoder {
    let mut cfg = ModelConfig::default();
    cfg.embed_dim = 32;
    cfg.vision.image_size = 24;
    cfg.vision.layers = 2;
    cfg.vision.heads = 2;
    cfg.text.layers = 2;
    cfg.text.heads = 2;
    cfg.text.max_tokens = 12;
    let names = class_names();
    let vocab = build_tokenizer(&names, DEFAULT_TEMPLATE, 12).expect("roster tokenizes");
    let mut m = DualEncoder::new(cfg, vocab, DType::F32).expect("valid config");
    if prompts {
        let p = PromptConfig {
            n_vision_tokens: 4,
            n_text_tokens: 4,
            depth: 2,
            init_std: 0.02,
        };
        m.attach_prompts(p, 0).expect("valid prompts");
    }
    m
}

pub fn class_names() -> Vec<String> {
    default_roster().into_iter().map(|c| c.name).collect()
}

/// Uniform random clips `[B, T, 24, 24, 3]`.
pub fn clips(batch: usize, frames: usize) -> Tensor {
    Tensor::rand(0f32, 1.0, (batch, frames, 24, 24, 3), &Device::Cpu).expect("cpu tensor")
}

pub fn dataset(per_class: usize) -> Dataset {
    let gen = GeneratorConfig {
        frames: 16,
        size: 28,
        ..Default::default()
    };
    let manifest = DatasetManifest::uniform(default_roster(), per_class, per_class, gen, 0).expect("valid manifest");
    Dataset::generate(manifest).expect("generates")
}
