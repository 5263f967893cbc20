//! Dual-encoder video classification with temporal pooling and learnable prompts.

pub mod embeddings;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod prompting;
pub mod protocols;
pub mod runconfig;
pub mod trainer;
pub mod videogen;

#[cfg(test)]
mod testutil;

pub use embeddings::{DumpHeader, EmbeddingDump};
pub use encoders::{
    DualEncoder, FrameEmbeddings, ModelConfig, ParameterStore, TextConfig, TextEmbedding, TokenSequence, VisionConfig,
    Vocabulary,
};
pub use error::{Error, Result};
pub use fusion::{FusionMode, LogitMatrix, VideoEmbedding};
pub use prompting::{FreezeMask, PromptConfig};
pub use protocols::{EvalOptions, EvalReport, Setting, SplitSpec};
pub use runconfig::{content_hash, RunConfigFile};
pub use trainer::{Checkpoint, Regime, TrainConfig, TrainData};
pub use videogen::{ClassSpec, Dataset, DatasetManifest, VideoSample, ViewSet};
