//! Fine-tuning regimes, the training loop, checkpoints and the two-stage
//! bridge-and-prompt pipeline.

mod bridge;
mod checkpoint;
pub mod optim;

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use bridge::{bridge_and_prompt, prompt_stage, BridgeOutcome};
pub use checkpoint::{Checkpoint, Provenance, StageRecord, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{AdamW, AdamWConfig, Schedule};

use crate::encoders::{max_logit_scale, DualEncoder, ParameterStore, LOGIT_SCALE};
use crate::error::{Error, Result};
use crate::fusion::{classification_loss, scale_from_logit, FusionMode};
use crate::prompting::{freeze_base, FreezeMask};
use crate::videogen::{derive_seed, stack_clips, train_clip, Dataset, VideoSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    FullFt,
    ImageFt,
    TextFt,
    PromptOnly,
    Frozen,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::FullFt,
        Regime::ImageFt,
        Regime::TextFt,
        Regime::PromptOnly,
        Regime::Frozen,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::FullFt => "full_ft",
            Regime::ImageFt => "image_ft",
            Regime::TextFt => "text_ft",
            Regime::PromptOnly => "prompt_only",
            Regime::Frozen => "frozen",
        }
    }

    pub fn default_learning_rate(self) -> f64 {
        match self {
            Regime::PromptOnly => 5e-3,
            _ => 5e-4,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown regime `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` picks the regime default.
    pub learning_rate: Option<f64>,
    pub weight_decay: f64,
    pub fusion: FusionMode,
    pub frames: usize,
    pub crop_size: usize,
    pub seed: u64,
    pub warmup_fraction: f64,
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub source_dataset: Option<String>,
    /// Stage-1 checkpoint a prompt-only run starts from.
    pub stage1_checkpoint: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::FullFt,
            epochs: 30,
            batch_size: 32,
            learning_rate: None,
            weight_decay: 0.001,
            fusion: FusionMode::Embedding,
            frames: 8,
            crop_size: 32,
            seed: 0,
            warmup_fraction: 0.1,
            grad_clip: 1.0,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            source_dataset: None,
            stage1_checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn lr(&self) -> f64 {
        self.learning_rate.unwrap_or_else(|| self.regime.default_learning_rate())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Checks shared by config files and programmatic runs; a zero learning rate
    /// is allowed here so the optimizer can be exercised as an identity.
    fn validate_numbers(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::config(format!("train.learning_rate must be >= 0, got {lr}")));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be positive"));
        }
        if self.frames == 0 || self.crop_size == 0 {
            return Err(Error::config("train.frames and train.crop_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("train.beta1 and train.beta2 must be in [0, 1)"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) || !(self.grad_clip >= 0.0) {
            return Err(Error::config("train.eps must be positive; weight_decay and grad_clip non-negative"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::config("train.warmup_fraction must be in [0, 1]"));
        }
        Ok(())
    }

    /// Full validation for a run described by a config file.
    pub fn validate(&self) -> Result<()> {
        self.validate_numbers()?;
        if !(self.lr() > 0.0) {
            return Err(Error::config("train.learning_rate must be positive"));
        }
        if self.regime == Regime::PromptOnly && self.stage1_checkpoint.is_none() {
            return Err(Error::config(
                "train.regime = prompt_only needs train.stage1_checkpoint (a fine-tuned stage-1 model)",
            ));
        }
        Ok(())
    }
}

/// Which parameters a regime updates.
pub fn regime_mask(regime: Regime, params: &ParameterStore) -> Result<FreezeMask> {
    Ok(match regime {
        Regime::FullFt => FreezeMask::from_predicate(params, |_| true),
        Regime::ImageFt => FreezeMask::from_predicate(params, |n| n.starts_with("vision.") || n == LOGIT_SCALE),
        Regime::TextFt => FreezeMask::from_predicate(params, |n| n.starts_with("text.") || n == LOGIT_SCALE),
        Regime::PromptOnly => freeze_base(params)?,
        Regime::Frozen => FreezeMask::from_predicate(params, |_| false),
    })
}

/// Labelled training clips drawn from a dataset, with the label space they are
/// scored against.
#[derive(Debug, Clone)]
pub struct TrainData<'a> {
    pub samples: Vec<&'a VideoSample>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl<'a> TrainData<'a> {
    /// Train-split samples of `classes` (optionally only `video_ids`), labelled by
    /// position in `classes`.
    pub fn from_dataset(ds: &'a Dataset, classes: &[String], video_ids: Option<&[u64]>) -> Result<Self> {
        let ids: Vec<usize> = classes
            .iter()
            .map(|c| {
                ds.manifest
                    .class_id(c)
                    .ok_or_else(|| Error::data(format!("class `{c}` not in dataset {}", ds.manifest.dataset_id)))
            })
            .collect::<Result<_>>()?;
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for s in &ds.train {
            let Some(label) = ids.iter().position(|&c| c == s.class_id) else {
                continue;
            };
            if video_ids.is_some_and(|v| !v.contains(&s.video_id)) {
                continue;
            }
            samples.push(s);
            labels.push(label);
        }
        if let Some(v) = video_ids {
            if samples.len() != v.len() {
                return Err(Error::data(format!(
                    "{} of {} requested training videos found among the training classes",
                    samples.len(),
                    v.len()
                )));
            }
        }
        if samples.is_empty() {
            return Err(Error::data("no training samples"));
        }
        Ok(Self {
            samples,
            labels,
            class_names: classes.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Mean batch loss per optimizer step.
    pub loss_curve: Vec<f64>,
    pub epochs: usize,
    pub steps: usize,
    pub final_loss: Option<f64>,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Clips of one batch, `[B, T, crop, crop, C]` in the model dtype.
fn batch_clips(model: &DualEncoder, batch: &[&VideoSample], cfg: &TrainConfig, epoch: usize) -> Result<Tensor> {
    let clips = batch
        .iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, epoch as u64, s.video_id, 0x636c]));
            train_clip(s, cfg.frames, cfg.crop_size, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(stack_clips(&clips)?.to_dtype(model.params.dtype())?)
}

/// Mean batch loss of `batch` for the current parameters.
pub fn batch_loss(
    model: &DualEncoder,
    clips: &Tensor,
    labels: &[usize],
    texts: &Tensor,
    fusion: FusionMode,
) -> Result<Tensor> {
    let frames = model.encode_clips(clips)?;
    let scale = scale_from_logit(&model.logit_scale()?)?;
    Ok(classification_loss(&frames, texts, &scale, labels, fusion)?.mean)
}

fn clamp_logit_scale(params: &ParameterStore) -> Result<()> {
    let v = params.values(LOGIT_SCALE)?[0];
    let max = max_logit_scale();
    if v > max {
        params.set(LOGIT_SCALE, &Tensor::new(max, params.device())?.to_dtype(params.dtype())?)?;
    }
    Ok(())
}

/// Optimize the parameters the regime's mask allows.
///
/// Each epoch shuffles the samples with a seed derived from `(seed, epoch)`; each
/// clip draws its frames and crop from `(seed, epoch, video_id)`. Every clip is
/// scored against the texts of the whole label space.
pub fn train(cfg: &TrainConfig, model: &mut DualEncoder, data: &TrainData<'_>) -> Result<TrainOutcome> {
    cfg.validate_numbers()?;
    if data.is_empty() || data.samples.len() != data.labels.len() {
        return Err(Error::data("training data needs one label per sample"));
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= data.class_names.len()) {
        return Err(Error::data(format!("label {bad} outside the label space")));
    }
    model.check_vocab(&data.class_names)?;
    let mask = regime_mask(cfg.regime, &model.params)?;
    let names: Vec<String> = mask.trainable_names().map(String::from).collect();
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    if names.is_empty() {
        return Ok(TrainOutcome {
            loss_curve: vec![],
            epochs: cfg.epochs,
            steps: 0,
            final_loss: None,
        });
    }
    let text_trains = names
        .iter()
        .any(|n| n.starts_with("text.") || n.starts_with("prompt.text."));
    let tokens = model.tokenize_classes(&data.class_names)?;
    let frozen_texts = if text_trains {
        None
    } else {
        Some(model.encode_tokens(&tokens)?.detach())
    };
    let schedule = Schedule::new(cfg.lr(), total, cfg.warmup_fraction);
    let mut opt = AdamW::new(&model.params, names, cfg.adamw())?;
    let mut curve = Vec::with_capacity(total);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, epoch as u64, 0x7368])));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&VideoSample> = chunk.iter().map(|&i| data.samples[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let clips = batch_clips(model, &batch, cfg, epoch)?;
            let texts = match &frozen_texts {
                Some(t) => t.clone(),
                None => model.encode_tokens(&tokens)?,
            };
            let loss = batch_loss(model, &clips, &labels, &texts, cfg.fusion)?;
            let value = scalar(&loss)?;
            let lr = schedule.lr(step);
            if !value.is_finite() {
                return Err(Error::NanLoss {
                    epoch,
                    step,
                    lr,
                    last_loss: curve.last().copied(),
                });
            }
            let grads = loss.backward()?;
            let mut g = opt.collect_grads(&model.params, &grads)?;
            optim::clip_global_norm(&mut g, cfg.grad_clip)?;
            opt.step(&model.params, &g, lr)?;
            clamp_logit_scale(&model.params)?;
            curve.push(value);
            step += 1;
        }
    }
    Ok(TrainOutcome {
        final_loss: curve.last().copied(),
        loss_curve: curve,
        epochs: cfg.epochs,
        steps: step,
    })
}
