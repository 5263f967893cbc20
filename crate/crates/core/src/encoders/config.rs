use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on the text sequence length fed to the text tower.
pub const MAX_TEXT_TOKENS: usize = 77;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisionConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 3,
            patch_size: 8,
            layers: 4,
            heads: 4,
            mlp_ratio: 4,
        }
    }
}

impl VisionConfig {
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextConfig {
    /// Filled in from the tokenizer when the model is built.
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            max_tokens: 16,
            layers: 4,
            heads: 4,
            mlp_ratio: 4,
        }
    }
}

/// Shape of the miniature dual encoder. Both towers run at width `embed_dim`
/// and project into the shared `embed_dim`-wide space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub vision: VisionConfig,
    pub text: TextConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            vision: VisionConfig::default(),
            text: TextConfig::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let v = &self.vision;
        let t = &self.text;
        if self.embed_dim == 0 {
            return Err(Error::config("model.embed_dim must be positive"));
        }
        if v.patch_size == 0 || v.image_size == 0 || !v.image_size.is_multiple_of(v.patch_size) {
            return Err(Error::config(format!(
                "model.vision.image_size {} is not divisible by patch_size {}",
                v.image_size, v.patch_size
            )));
        }
        if v.channels == 0 {
            return Err(Error::config("model.vision.channels must be positive"));
        }
        for (tower, heads) in [("vision", v.heads), ("text", t.heads)] {
            if heads == 0 || !self.embed_dim.is_multiple_of(heads) {
                return Err(Error::config(format!(
                    "model.{tower}.heads {heads} does not divide embed_dim {}",
                    self.embed_dim
                )));
            }
        }
        if v.layers == 0 || t.layers == 0 {
            return Err(Error::config("both towers need at least one layer"));
        }
        if v.mlp_ratio == 0 || t.mlp_ratio == 0 {
            return Err(Error::config("mlp_ratio must be positive"));
        }
        if t.max_tokens < 2 || t.max_tokens > MAX_TEXT_TOKENS {
            return Err(Error::config(format!(
                "model.text.max_tokens must be in 2..={MAX_TEXT_TOKENS}, got {}",
                t.max_tokens
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.vision.num_patches(), 16);
        assert_eq!(cfg.vision.patch_dim(), 192);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut cfg = ModelConfig::default();
        cfg.vision.patch_size = 5;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ModelConfig::default();
        cfg.text.heads = 3;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::default();
        cfg.text.max_tokens = 78;
        assert!(cfg.validate().is_err());
    }
}
