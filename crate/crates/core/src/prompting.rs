//! Deep vision-language prompting on a frozen dual encoder.
//!
//! Learnable prompt banks live in the [`ParameterStore`] under `prompt.vision.{l}`
//! and `prompt.text.{l}` for layers `0..depth`. At layer 0 the bank is prepended
//! to the content tokens; at each later layer below `depth` the prompt-slot
//! outputs of the previous layer are discarded and replaced by that layer's
//! bank; from `depth` on the prompt slots simply propagate.

use std::collections::BTreeMap;

use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::params::{normal, ParameterStore, PROMPT_PREFIX};
use crate::encoders::{ModelConfig, MAX_TEXT_TOKENS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    pub n_vision_tokens: usize,
    pub n_text_tokens: usize,
    pub depth: usize,
    pub init_std: f64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            n_vision_tokens: 8,
            n_text_tokens: 8,
            depth: 4,
            init_std: 0.02,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let max_depth = model.vision.layers.min(model.text.layers);
        if self.depth == 0 || self.depth > max_depth {
            return Err(Error::config(format!(
                "prompts.depth must be in 1..={max_depth}, got {}",
                self.depth
            )));
        }
        if self.n_text_tokens + model.text.max_tokens > MAX_TEXT_TOKENS {
            return Err(Error::config(format!(
                "prompted text length {} + {} exceeds {MAX_TEXT_TOKENS} tokens",
                self.n_text_tokens, model.text.max_tokens
            )));
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return Err(Error::config("prompts.init_std must be finite and non-negative"));
        }
        Ok(())
    }

    /// Number of scalar prompt parameters for towers of the given width.
    pub fn trainable_count(&self, width: usize) -> usize {
        self.depth * (self.n_vision_tokens * width + self.n_text_tokens * width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tower {
    Vision,
    Text,
}

impl Tower {
    fn key(self) -> &'static str {
        match self {
            Tower::Vision => "vision",
            Tower::Text => "text",
        }
    }
}

pub fn prompt_name(tower: Tower, layer: usize) -> String {
    format!("{PROMPT_PREFIX}{}.{layer}", tower.key())
}

/// Borrowed view over one tower's prompt banks.
#[derive(Debug, Clone, Copy)]
pub struct PromptBank<'a> {
    pub tower: Tower,
    pub n_tokens: usize,
    pub depth: usize,
    pub tower_layers: usize,
    params: &'a ParameterStore,
}

impl<'a> PromptBank<'a> {
    pub fn new(params: &'a ParameterStore, cfg: &PromptConfig, model: &ModelConfig, tower: Tower) -> Self {
        let (n_tokens, tower_layers) = match tower {
            Tower::Vision => (cfg.n_vision_tokens, model.vision.layers),
            Tower::Text => (cfg.n_text_tokens, model.text.layers),
        };
        Self {
            tower,
            n_tokens,
            depth: cfg.depth,
            tower_layers,
            params,
        }
    }

    pub fn layer(&self, layer: usize) -> Result<Tensor> {
        self.params.get(&prompt_name(self.tower, layer))
    }
}

/// Insert prompt tokens into the input of transformer layer `layer_index`.
///
/// `tokens` is `[n, s, w]`. At layer 0 it holds content tokens only; at later
/// layers its first `bank.n_tokens` positions are prompt slots.
pub fn inject(layer_index: usize, tokens: &Tensor, bank: &PromptBank<'_>) -> Result<Tensor> {
    if layer_index >= bank.tower_layers {
        return Err(Error::shape(format!(
            "layer {layer_index} out of range for a {}-layer tower",
            bank.tower_layers
        )));
    }
    let nt = bank.n_tokens;
    if nt == 0 || layer_index >= bank.depth {
        return Ok(tokens.clone());
    }
    let (n, s, w) = tokens.dims3()?;
    let fresh = bank.layer(layer_index)?;
    let (bn, bw) = fresh.dims2()?;
    if bw != w || bn != nt {
        return Err(Error::shape(format!(
            "prompt bank is {bn}x{bw}, tokens have width {w} and {nt} prompt slots"
        )));
    }
    let fresh = fresh.unsqueeze(0)?.broadcast_as((n, nt, w))?;
    let content = if layer_index == 0 {
        tokens.clone()
    } else {
        tokens.narrow(1, nt, s - nt)?
    };
    Ok(Tensor::cat(&[&fresh, &content], 1)?)
}

/// Register fresh prompt banks in `params`. Base parameters are not touched.
pub fn attach_prompts(
    params: &mut ParameterStore,
    model: &ModelConfig,
    cfg: &PromptConfig,
    seed: u64,
) -> Result<()> {
    cfg.validate(model)?;
    if params.has_prompts() {
        let existing = params.names().find(|n| n.starts_with(PROMPT_PREFIX)).unwrap_or_default();
        return Err(Error::DuplicateParameter(existing.to_string()));
    }
    let width = model.embed_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (tower, n) in [(Tower::Vision, cfg.n_vision_tokens), (Tower::Text, cfg.n_text_tokens)] {
        for layer in 0..cfg.depth {
            let values = normal(&mut rng, n * width, cfg.init_std);
            params.insert_values(prompt_name(tower, layer), &[n, width], values)?;
        }
    }
    Ok(())
}

/// Trainable/frozen classification of every parameter name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeMask {
    trainable: BTreeMap<String, bool>,
}

impl FreezeMask {
    pub fn from_predicate(params: &ParameterStore, pred: impl Fn(&str) -> bool) -> Self {
        Self {
            trainable: params.names().map(|n| (n.to_string(), pred(n))).collect(),
        }
    }

    /// Unknown names are reported as frozen.
    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable.get(name).copied().unwrap_or(false)
    }

    pub fn covers(&self, params: &ParameterStore) -> bool {
        params.names().all(|n| self.trainable.contains_key(n)) && self.trainable.len() == params.len()
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.trainable.iter().filter(|(_, &t)| t).map(|(n, _)| n.as_str())
    }

    pub fn frozen_names(&self) -> impl Iterator<Item = &str> {
        self.trainable.iter().filter(|(_, &t)| !t).map(|(n, _)| n.as_str())
    }
}

/// Mask for prompt-only adaptation: exactly the `prompt.` names train.
pub fn freeze_base(params: &ParameterStore) -> Result<FreezeMask> {
    if !params.has_prompts() {
        return Err(Error::config("freeze_base needs prompts attached"));
    }
    Ok(FreezeMask::from_predicate(params, |n| n.starts_with(PROMPT_PREFIX)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{build_tokenizer, DualEncoder, DEFAULT_TEMPLATE};
    use candle_core::{DType, Device};

    fn small_model() -> DualEncoder {
        let mut cfg = ModelConfig::default();
        cfg.embed_dim = 16;
        cfg.vision.image_size = 16;
        cfg.vision.layers = 3;
        cfg.vision.heads = 2;
        cfg.text.layers = 3;
        cfg.text.heads = 2;
        let vocab = build_tokenizer(&["red circle", "blue square"], DEFAULT_TEMPLATE, 16).unwrap();
        DualEncoder::new(cfg, vocab, DType::F32).unwrap()
    }

    #[test]
    fn depth_one_adds_one_array_per_tower() {
        let mut m = small_model();
        let before = m.params.len();
        let cfg = PromptConfig {
            depth: 1,
            ..PromptConfig::default()
        };
        m.attach_prompts(cfg, 5).unwrap();
        assert_eq!(m.params.len(), before + 2);
    }

    #[test]
    fn attach_twice_is_a_collision() {
        let mut m = small_model();
        let cfg = PromptConfig { depth: 2, ..Default::default() };
        attach_prompts(&mut m.params, &m.config, &cfg, 1).unwrap();
        let err = attach_prompts(&mut m.params, &m.config, &cfg, 1).unwrap_err();
        assert!(matches!(err, Error::DuplicateParameter(_)));
    }

    #[test]
    fn too_deep_is_a_config_error() {
        let mut m = small_model();
        let cfg = PromptConfig { depth: 4, ..Default::default() };
        assert!(matches!(
            attach_prompts(&mut m.params, &m.config, &cfg, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn attach_is_deterministic_and_leaves_base_untouched() {
        let cfg = PromptConfig { depth: 3, ..Default::default() };
        let mut a = small_model();
        let base = a.params.snapshot().unwrap();
        a.attach_prompts(cfg.clone(), 9).unwrap();
        let mut b = small_model();
        b.attach_prompts(cfg, 9).unwrap();
        let (sa, sb) = (a.params.snapshot().unwrap(), b.params.snapshot().unwrap());
        assert_eq!(sa, sb);
        for (name, vals) in &base {
            assert_eq!(&sa[name], vals);
        }
    }

    #[test]
    fn inject_shapes_through_all_layers() {
        let mut m = small_model();
        let cfg = PromptConfig {
            n_vision_tokens: 3,
            n_text_tokens: 2,
            depth: 2,
            init_std: 0.02,
        };
        m.attach_prompts(cfg.clone(), 0).unwrap();
        let bank = PromptBank::new(&m.params, &cfg, &m.config, Tower::Vision);
        let content = Tensor::randn(0f32, 1.0, (2, 5, 16), &Device::Cpu).unwrap();
        let mut x = content.clone();
        for layer in 0..m.config.vision.layers {
            let before = x.clone();
            x = inject(layer, &x, &bank).unwrap();
            assert_eq!(x.dims(), &[2, 3 + 5, 16]);
            // content slots pass through unchanged
            let tail = x.narrow(1, 3, 5).unwrap();
            let expect = if layer == 0 { content.clone() } else { before.narrow(1, 3, 5).unwrap() };
            assert_eq!(tail.to_vec3::<f32>().unwrap(), expect.to_vec3::<f32>().unwrap());
            if layer >= cfg.depth {
                assert_eq!(x.to_vec3::<f32>().unwrap(), before.to_vec3::<f32>().unwrap());
            } else {
                let head = x.narrow(1, 0, 3).unwrap().get(0).unwrap();
                assert_eq!(head.to_vec2::<f32>().unwrap(), bank.layer(layer).unwrap().to_vec2::<f32>().unwrap());
            }
            // perturb the prompt slots as a stand-in for a transformer layer
            x = (x + 1.0).unwrap();
        }
    }

    #[test]
    fn inject_rejects_width_mismatch() {
        let mut m = small_model();
        let cfg = PromptConfig { depth: 1, ..Default::default() };
        m.attach_prompts(cfg.clone(), 0).unwrap();
        let bank = PromptBank::new(&m.params, &cfg, &m.config, Tower::Text);
        let tokens = Tensor::zeros((1, 4, 8), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(inject(0, &tokens, &bank), Err(Error::Shape(_))));
    }

    #[test]
    fn freeze_base_marks_only_prompts() {
        let mut m = small_model();
        assert!(freeze_base(&m.params).is_err());
        let cfg = PromptConfig { n_vision_tokens: 4, n_text_tokens: 2, depth: 3, init_std: 0.02 };
        m.attach_prompts(cfg.clone(), 0).unwrap();
        let mask = freeze_base(&m.params).unwrap();
        assert!(mask.covers(&m.params));
        let names: Vec<_> = mask.trainable_names().collect();
        assert!(names.iter().all(|n| n.starts_with("prompt.")));
        let count = m.params.numel(names).unwrap();
        assert_eq!(count, cfg.trainable_count(16));
        assert_eq!(count, 3 * (4 * 16 + 2 * 16));
    }
}
