use candle_core::{Tensor, D};
use rand::Rng;

use super::nn::{block, init_block, init_layer_norm, linear, ln, width_std};
use super::params::{trunc_normal, ParameterStore};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::prompting::{inject, PromptBank, PromptConfig, Tower};

/// Split an `H x W x C` frame into non-overlapping `P x P` patches.
///
/// Rows are patches in row-major grid order; each row is the patch's pixels
/// in `(y, x, c)` order. Returns `N x (P*P*C)` with `N = (H/P)*(W/P)`.
pub fn patchify(frame: &Tensor, patch: usize) -> Result<Tensor> {
    let (h, w, c) = frame.dims3()?;
    let out = patchify_batch(&frame.reshape((1, h, w, c))?, patch)?;
    Ok(out.squeeze(0)?)
}

/// Batched [`patchify`]: `[n, H, W, C] -> [n, N, P*P*C]`.
pub fn patchify_batch(frames: &Tensor, patch: usize) -> Result<Tensor> {
    let (n, h, w, c) = frames.dims4()?;
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::shape(format!(
            "frame {h}x{w} is not divisible into {patch}x{patch} patches"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    Ok(frames
        .reshape((n * gh, patch, gw, patch * c))?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((n, gh * gw, patch * patch * c))?)
}

pub(crate) fn init(p: &mut ParameterStore, rng: &mut impl Rng, cfg: &ModelConfig) -> Result<()> {
    let v = &cfg.vision;
    let w = cfg.embed_dim;
    p.insert_values(
        "vision.patch_embed.weight",
        &[v.patch_dim(), w],
        trunc_normal(rng, v.patch_dim() * w, width_std(v.patch_dim())),
    )?;
    p.insert_values("vision.class_embedding", &[w], trunc_normal(rng, w, width_std(w)))?;
    let positions = v.num_patches() + 1;
    p.insert_values(
        "vision.positional_embedding",
        &[positions, w],
        trunc_normal(rng, positions * w, width_std(w)),
    )?;
    init_layer_norm(p, "vision.ln_pre", w)?;
    for l in 0..v.layers {
        init_block(p, rng, &format!("vision.blocks.{l}"), w, v.mlp_ratio, v.layers)?;
    }
    init_layer_norm(p, "vision.ln_post", w)?;
    p.insert_values("vision.proj", &[w, cfg.embed_dim], trunc_normal(rng, w * cfg.embed_dim, width_std(w)))
}

/// Encode a batch of independent frames `[n, H, W, C]` into `[n, D]`.
pub(crate) fn forward(
    frames: &Tensor,
    p: &ParameterStore,
    cfg: &ModelConfig,
    prompts: Option<&PromptConfig>,
) -> Result<Tensor> {
    let v = &cfg.vision;
    let (n, h, w, c) = frames.dims4()?;
    if h != v.image_size || w != v.image_size || c != v.channels {
        return Err(Error::shape(format!(
            "frames are {h}x{w}x{c}, model expects {0}x{0}x{1}",
            v.image_size, v.channels
        )));
    }
    let width = cfg.embed_dim;
    let frames = frames.to_dtype(p.dtype())?;
    let patches = patchify_batch(&frames, v.patch_size)?;
    let x = linear(&patches, &p.get("vision.patch_embed.weight")?, None)?;
    let cls = p
        .get("vision.class_embedding")?
        .reshape((1, 1, width))?
        .broadcast_as((n, 1, width))?;
    let x = Tensor::cat(&[&cls, &x], 1)?;
    let x = x.broadcast_add(&p.get("vision.positional_embedding")?)?;
    let mut x = ln(&x, p, "vision.ln_pre")?;

    let bank = prompts.map(|pc| PromptBank::new(p, pc, cfg, Tower::Vision));
    for l in 0..v.layers {
        if let Some(bank) = &bank {
            x = inject(l, &x, bank)?;
        }
        x = block(&x, p, &format!("vision.blocks.{l}"), v.heads, None)?;
    }
    let cls_pos = bank.map_or(0, |b| b.n_tokens);
    let cls = x.narrow(1, cls_pos, 1)?.squeeze(1)?;
    let cls = ln(&cls, p, "vision.ln_post")?;
    let out = cls.matmul(&p.get("vision.proj")?)?;
    debug_assert_eq!(out.dim(D::Minus1)?, cfg.embed_dim);
    Ok(out)
}
