//! TOML run configuration with sections `[model]`, `[data]`, `[train]`,
//! `[protocol]` and `[prompts]`, validated before any compute.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::ModelConfig;
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::prompting::PromptConfig;
use crate::protocols::{EvalOptions, Setting, ALLOWED_SHOTS};
use crate::trainer::TrainConfig;
use crate::videogen::{default_roster, ClassCounts, ClassSpec, DatasetManifest, GeneratorConfig, ViewSet};

/// SHA-256 hex digest of a value's canonical JSON encoding.
pub fn content_hash(value: &impl Serialize) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub seed: u64,
    pub generator: GeneratorConfig,
    /// `None` uses the built-in 19-class roster.
    pub classes: Option<Vec<ClassSpec>>,
    pub train_per_class: usize,
    pub val_per_class: usize,
    /// Optional per-class counts overriding the uniform ones.
    pub counts: Option<Vec<ClassCounts>>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            generator: GeneratorConfig::default(),
            classes: None,
            train_per_class: 32,
            val_per_class: 12,
            counts: None,
        }
    }
}

impl DataConfig {
    pub fn classes(&self) -> Vec<ClassSpec> {
        self.classes.clone().unwrap_or_else(default_roster)
    }

    pub fn manifest(&self) -> Result<DatasetManifest> {
        let classes = self.classes();
        let counts = match &self.counts {
            Some(c) => c.clone(),
            None => vec![
                ClassCounts {
                    train: self.train_per_class,
                    val: self.val_per_class,
                };
                classes.len()
            ],
        };
        DatasetManifest::new(classes, counts, self.generator.clone(), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub setting: Setting,
    pub shots: Option<usize>,
    pub seed: u64,
    /// Held-out classes for zero-shot evaluation.
    pub target_classes: Vec<String>,
    pub fusion: FusionMode,
    /// `None` uses the setting's default frame count and views.
    pub views: Option<ViewSet>,
    pub batch_size: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            setting: Setting::FullySupervised,
            shots: None,
            seed: 0,
            target_classes: vec![],
            fusion: FusionMode::Embedding,
            views: None,
            batch_size: 16,
        }
    }
}

impl ProtocolConfig {
    pub fn eval_options(&self, crop_size: usize) -> EvalOptions {
        let mut o = EvalOptions::for_setting(self.setting, crop_size);
        if let Some(v) = &self.views {
            o.views = v.clone();
        }
        o.fusion = self.fusion;
        o.batch_size = self.batch_size;
        o
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub protocol: ProtocolConfig,
    pub prompts: PromptConfig,
}

impl RunConfigFile {
    /// Parse and validate; errors name the offending field path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(format!("{path}: {}", e.into_inner().message().trim()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn hash(&self) -> Result<String> {
        content_hash(self)
    }

    pub fn validate(&self) -> Result<()> {
        let mut model = self.model.clone();
        // vocab_size is filled from the tokenizer, so only the structural checks apply here
        model.text.vocab_size = model.text.vocab_size.max(1);
        model.validate()?;
        self.prompts.validate(&model)?;
        self.data.manifest()?;
        let g = &self.data.generator;
        let crop = self.model.vision.image_size;
        if crop > g.size {
            return Err(Error::config(format!(
                "model.vision.image_size {crop} exceeds data.generator.size {}",
                g.size
            )));
        }
        if self.train.crop_size != crop {
            return Err(Error::config(format!(
                "train.crop_size {} must equal model.vision.image_size {crop}",
                self.train.crop_size
            )));
        }
        if self.train.frames > g.frames {
            return Err(Error::config(format!(
                "train.frames {} exceeds data.generator.frames {}",
                self.train.frames, g.frames
            )));
        }
        if !(self.train.lr() > 0.0) {
            return Err(Error::config("train.learning_rate must be positive"));
        }
        let eval = self.protocol.eval_options(crop);
        eval.views.validate(g.frames, g.size)?;
        if eval.views.crop_size != crop {
            return Err(Error::config("protocol.views.crop_size must equal model.vision.image_size"));
        }
        if let Some(k) = self.protocol.shots {
            if !ALLOWED_SHOTS.contains(&k) {
                return Err(Error::config(format!("protocol.shots must be one of {ALLOWED_SHOTS:?}")));
            }
        }
        let names: Vec<String> = self.data.classes().into_iter().map(|c| c.name).collect();
        if let Some(bad) = self.protocol.target_classes.iter().find(|c| !names.contains(c)) {
            return Err(Error::config(format!("protocol.target_classes: `{bad}` is not a data class")));
        }
        Ok(())
    }
}
