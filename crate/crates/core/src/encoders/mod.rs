//! Miniature dual encoder: a ViT over single frames and a causal text
//! transformer over prompted class names, both projecting into one shared
//! `embed_dim`-wide space.

mod config;
pub(crate) mod nn;
pub mod params;
mod text;
mod tokenizer;
mod vision;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ModelConfig, TextConfig, VisionConfig, MAX_TEXT_TOKENS};
pub use params::{ParameterStore, LOGIT_SCALE, PROMPT_PREFIX};
pub use tokenizer::{
    build_tokenizer, render_prompt, tokenize, TokenSequence, Vocabulary, BOS_ID, DEFAULT_TEMPLATE, EOS_ID,
    PAD_ID,
};
pub use vision::{patchify, patchify_batch};

use crate::error::{Error, Result};
use crate::prompting::{attach_prompts, PromptConfig};

/// Initial temperature; the logit scale stores `ln(1/tau)`.
pub const INIT_TEMPERATURE: f64 = 0.07;
/// Lower bound on the temperature, enforced on the stored logit scale.
pub const MIN_TEMPERATURE: f64 = 0.01;

pub fn max_logit_scale() -> f64 {
    (1.0 / MIN_TEMPERATURE).ln()
}

/// Per-frame embeddings of one video, `T x D`, unnormalized.
#[derive(Debug, Clone)]
pub struct FrameEmbeddings {
    pub values: Tensor,
    pub source_video_id: u64,
}

#[derive(Debug, Clone)]
pub struct TextEmbedding {
    pub value: Tensor,
    pub class_id: usize,
}

/// Dual encoder bundled with its vocabulary and optional prompt banks.
#[derive(Debug)]
pub struct DualEncoder {
    pub config: ModelConfig,
    pub prompts: Option<PromptConfig>,
    pub vocab: Vocabulary,
    pub params: ParameterStore,
}

impl DualEncoder {
    /// Fresh random-init model. `config.text.vocab_size` is taken from `vocab`.
    pub fn new(mut config: ModelConfig, vocab: Vocabulary, dtype: DType) -> Result<Self> {
        config.text.vocab_size = vocab.len();
        if vocab.max_tokens() != config.text.max_tokens {
            return Err(Error::config(format!(
                "tokenizer max_tokens {} differs from model.text.max_tokens {}",
                vocab.max_tokens(),
                config.text.max_tokens
            )));
        }
        config.validate()?;
        let mut params = ParameterStore::new(dtype, Device::Cpu);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        vision::init(&mut params, &mut rng, &config)?;
        text::init(&mut params, &mut rng, &config)?;
        params.insert_values(LOGIT_SCALE, &[], vec![(1.0 / INIT_TEMPERATURE).ln()])?;
        Ok(Self {
            config,
            prompts: None,
            vocab,
            params,
        })
    }

    /// Reassemble a model from loaded parts (checkpoint path).
    pub fn from_parts(
        config: ModelConfig,
        prompts: Option<PromptConfig>,
        vocab: Vocabulary,
        params: ParameterStore,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(pc) = &prompts {
            pc.validate(&config)?;
        }
        Ok(Self {
            config,
            prompts,
            vocab,
            params,
        })
    }

    pub fn attach_prompts(&mut self, cfg: PromptConfig, seed: u64) -> Result<()> {
        if self.prompts.is_some() {
            return Err(Error::DuplicateParameter("prompt.*".into()));
        }
        attach_prompts(&mut self.params, &self.config, &cfg, seed)?;
        self.prompts = Some(cfg);
        Ok(())
    }

    pub fn try_clone(&self) -> Result<Self> {
        Ok(Self {
            config: self.config.clone(),
            prompts: self.prompts.clone(),
            vocab: self.vocab.clone(),
            params: self.params.deep_clone()?,
        })
    }

    /// Same model, parameters cast to `dtype`.
    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        Ok(Self {
            config: self.config.clone(),
            prompts: self.prompts.clone(),
            vocab: self.vocab.clone(),
            params: self.params.to_dtype(dtype)?,
        })
    }

    /// Encode `T` frames `[T, H, W, C]` independently.
    pub fn encode_frames(&self, frames: &Tensor, video_id: u64) -> Result<FrameEmbeddings> {
        let values = vision::forward(frames, &self.params, &self.config, self.prompts.as_ref())?;
        Ok(FrameEmbeddings {
            values,
            source_video_id: video_id,
        })
    }

    /// Encode a batch of clips `[B, T, H, W, C]` into `[B, T, D]`.
    pub fn encode_clips(&self, clips: &Tensor) -> Result<Tensor> {
        let dims = clips.dims();
        if dims.len() != 5 {
            return Err(Error::shape(format!("expected [B, T, H, W, C] clips, got {dims:?}")));
        }
        let (b, t) = (dims[0], dims[1]);
        let flat = clips.reshape((b * t, dims[2], dims[3], dims[4]))?;
        let out = vision::forward(&flat, &self.params, &self.config, self.prompts.as_ref())?;
        Ok(out.reshape((b, t, self.config.embed_dim))?)
    }

    pub fn encode_text(&self, tokens: &TokenSequence, class_id: usize) -> Result<TextEmbedding> {
        let value = text::forward(std::slice::from_ref(tokens), &self.params, &self.config, self.prompts.as_ref())?
            .squeeze(0)?;
        Ok(TextEmbedding { value, class_id })
    }

    /// Encode several token sequences at once into `[K, D]`.
    pub fn encode_tokens(&self, tokens: &[TokenSequence]) -> Result<Tensor> {
        text::forward(tokens, &self.params, &self.config, self.prompts.as_ref())
    }

    /// Tokenize class names through the prompt template and encode them.
    pub fn encode_class_names(&self, names: &[impl AsRef<str>]) -> Result<Tensor> {
        let tokens = self.tokenize_classes(names)?;
        self.encode_tokens(&tokens)
    }

    pub fn tokenize_classes(&self, names: &[impl AsRef<str>]) -> Result<Vec<TokenSequence>> {
        self.check_vocab(names)?;
        names.iter().map(|n| self.vocab.tokenize_class(n.as_ref())).collect()
    }

    /// Fails with [`Error::Vocab`] if any class name uses words this model never saw.
    pub fn check_vocab(&self, names: &[impl AsRef<str>]) -> Result<()> {
        for name in names {
            let missing = self.vocab.missing_words(name.as_ref());
            if !missing.is_empty() {
                return Err(Error::Vocab(format!(
                    "class `{}` uses words outside the checkpoint vocabulary: {}",
                    name.as_ref(),
                    missing.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn logit_scale(&self) -> Result<Tensor> {
        self.params.get(LOGIT_SCALE)
    }

    pub fn temperature(&self) -> Result<f64> {
        let s = self.params.values(LOGIT_SCALE)?[0];
        Ok((-s).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dtype: DType) -> DualEncoder {
        let cfg = ModelConfig {
            embed_dim: 16,
            vision: VisionConfig {
                image_size: 16,
                channels: 3,
                patch_size: 8,
                layers: 2,
                heads: 2,
                mlp_ratio: 2,
            },
            text: TextConfig {
                vocab_size: 0,
                max_tokens: 12,
                layers: 2,
                heads: 2,
                mlp_ratio: 2,
            },
            seed: 7,
        };
        let vocab = build_tokenizer(&["red circle", "blue square", "green triangle"], DEFAULT_TEMPLATE, 12).unwrap();
        DualEncoder::new(cfg, vocab, dtype).unwrap()
    }

    fn frames(t: usize, seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f32> = (0..t * 16 * 16 * 3).map(|_| rng.gen()).collect();
        Tensor::from_vec(v, (t, 16, 16, 3), &Device::Cpu).unwrap()
    }

    #[test]
    fn init_is_finite_and_deterministic() {
        let a = tiny(DType::F32).params.snapshot().unwrap();
        let b = tiny(DType::F32).params.snapshot().unwrap();
        assert_eq!(a, b);
        assert!(a.values().flatten().all(|v| v.is_finite()));
        let s = a[LOGIT_SCALE][0] as f64;
        assert!((s - (1.0f64 / 0.07).ln()).abs() < 1e-6);
    }

    #[test]
    fn duplicated_frame_gives_identical_rows() {
        let m = tiny(DType::F32);
        let one = frames(1, 0);
        let four = one.repeat((4, 1, 1, 1)).unwrap();
        let out = m.encode_frames(&four, 0).unwrap().values.to_vec2::<f32>().unwrap();
        assert!(out.iter().all(|r| r == &out[0]));
        assert!(out[0].iter().all(|v| v.is_finite()));
    }

    #[test]
    fn frame_permutation_permutes_rows() {
        let m = tiny(DType::F32);
        let x = frames(4, 1);
        let perm = [2u32, 0, 3, 1];
        let idx = Tensor::new(&perm, &Device::Cpu).unwrap();
        let base = m.encode_frames(&x, 0).unwrap().values.to_vec2::<f32>().unwrap();
        let permuted = m
            .encode_frames(&x.index_select(&idx, 0).unwrap(), 0)
            .unwrap()
            .values
            .to_vec2::<f32>()
            .unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(permuted[i], base[p as usize]);
        }
    }

    #[test]
    fn single_frame_matches_its_batched_row() {
        let m = tiny(DType::F32);
        let x = frames(4, 2);
        let batched = m.encode_frames(&x, 0).unwrap().values.to_vec2::<f32>().unwrap();
        for i in 0..4 {
            let alone = m
                .encode_frames(&x.narrow(0, i, 1).unwrap(), 0)
                .unwrap()
                .values
                .to_vec2::<f32>()
                .unwrap();
            for (a, b) in alone[0].iter().zip(&batched[i]) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn frame_shape_mismatch() {
        let m = tiny(DType::F32);
        let x = Tensor::zeros((2, 8, 8, 3), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(m.encode_frames(&x, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn text_embeddings_are_distinct_and_deterministic() {
        let m = tiny(DType::F32);
        let a = m.encode_class_names(&["red circle", "blue square"]).unwrap();
        let b = m.encode_class_names(&["red circle", "blue square"]).unwrap();
        let (a, b) = (a.to_vec2::<f32>().unwrap(), b.to_vec2::<f32>().unwrap());
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn pad_embedding_row_does_not_leak() {
        let m = tiny(DType::F64);
        let seq = m.vocab.tokenize_class("red circle").unwrap();
        let before = m.encode_text(&seq, 0).unwrap().value.to_vec1::<f64>().unwrap();
        let table = m.params.get("text.token_embedding").unwrap();
        let mut rows = table.to_vec2::<f64>().unwrap();
        rows[PAD_ID as usize].iter_mut().for_each(|v| *v += 3.0);
        let perturbed = Tensor::new(rows, &Device::Cpu).unwrap();
        m.params.set("text.token_embedding", &perturbed).unwrap();
        let after = m.encode_text(&seq, 0).unwrap().value.to_vec1::<f64>().unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn eos_out_of_range() {
        let m = tiny(DType::F32);
        let mut seq = m.vocab.tokenize_class("red circle").unwrap();
        seq.eos_index = 12;
        assert!(matches!(m.encode_text(&seq, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn unknown_class_words_are_a_vocab_error() {
        let m = tiny(DType::F32);
        assert!(matches!(m.encode_class_names(&["purple circle"]), Err(Error::Vocab(_))));
    }

    #[test]
    fn zero_token_prompts_are_an_exact_identity() {
        let mut m = tiny(DType::F32);
        let x = frames(3, 3);
        let v0 = m.encode_frames(&x, 0).unwrap().values.to_vec2::<f32>().unwrap();
        let t0 = m.encode_class_names(&["green triangle"]).unwrap().to_vec2::<f32>().unwrap();
        m.attach_prompts(
            PromptConfig {
                n_vision_tokens: 0,
                n_text_tokens: 0,
                depth: 2,
                init_std: 0.02,
            },
            0,
        )
        .unwrap();
        let v1 = m.encode_frames(&x, 0).unwrap().values.to_vec2::<f32>().unwrap();
        let t1 = m.encode_class_names(&["green triangle"]).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(v0, v1);
        assert_eq!(t0, t1);
    }

    #[test]
    fn prompted_text_still_reads_true_eos_and_ignores_pad() {
        let mut m = tiny(DType::F64);
        m.attach_prompts(
            PromptConfig {
                n_vision_tokens: 2,
                n_text_tokens: 3,
                depth: 2,
                init_std: 0.5,
            },
            1,
        )
        .unwrap();
        let seq = m.vocab.tokenize_class("blue square").unwrap();
        let before = m.encode_text(&seq, 0).unwrap().value.to_vec1::<f64>().unwrap();
        let table = m.params.get("text.token_embedding").unwrap();
        let mut rows = table.to_vec2::<f64>().unwrap();
        rows[PAD_ID as usize].iter_mut().for_each(|v| *v -= 1.0);
        m.params.set("text.token_embedding", &Tensor::new(rows, &Device::Cpu).unwrap()).unwrap();
        let after = m.encode_text(&seq, 0).unwrap().value.to_vec1::<f64>().unwrap();
        assert_eq!(before, after);
        // prompts do change the output
        let plain = tiny(DType::F64).encode_text(&seq, 0).unwrap().value.to_vec1::<f64>().unwrap();
        assert_ne!(plain, before);
    }
}
