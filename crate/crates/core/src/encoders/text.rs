use candle_core::{Device, DType, Tensor};
use rand::Rng;

use super::nn::{block, init_block, init_layer_norm, ln, width_std, INIT_STD};
use super::params::{trunc_normal, ParameterStore};
use super::tokenizer::TokenSequence;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::prompting::{inject, PromptBank, PromptConfig, Tower};

const MASKED: f64 = -1e9;

pub(crate) fn init(p: &mut ParameterStore, rng: &mut impl Rng, cfg: &ModelConfig) -> Result<()> {
    let t = &cfg.text;
    let w = cfg.embed_dim;
    p.insert_values(
        "text.token_embedding",
        &[t.vocab_size, w],
        trunc_normal(rng, t.vocab_size * w, INIT_STD),
    )?;
    p.insert_values(
        "text.positional_embedding",
        &[t.max_tokens, w],
        trunc_normal(rng, t.max_tokens * w, INIT_STD / 2.0),
    )?;
    for l in 0..t.layers {
        init_block(p, rng, &format!("text.blocks.{l}"), w, t.mlp_ratio, t.layers)?;
    }
    init_layer_norm(p, "text.ln_final", w)?;
    p.insert_values("text.proj", &[w, cfg.embed_dim], trunc_normal(rng, w * cfg.embed_dim, width_std(w)))
}

/// Additive causal mask: position `i` attends to `j <= i` only.
fn causal_mask(len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let vals: Vec<f64> = (0..len)
        .flat_map(|i| (0..len).map(move |j| if j > i { MASKED } else { 0.0 }))
        .collect();
    Ok(Tensor::from_vec(vals, (len, len), device)?.to_dtype(dtype)?)
}

/// Encode `k` token sequences into `[k, D]`, read out at each EOS position.
pub(crate) fn forward(
    tokens: &[TokenSequence],
    p: &ParameterStore,
    cfg: &ModelConfig,
    prompts: Option<&PromptConfig>,
) -> Result<Tensor> {
    let t = &cfg.text;
    let k = tokens.len();
    if k == 0 {
        return Err(Error::EmptyClassSet);
    }
    let len = t.max_tokens;
    for seq in tokens {
        seq.validate(len)?;
        if let Some(bad) = seq.ids.iter().find(|&&id| id as usize >= t.vocab_size) {
            return Err(Error::shape(format!("token id {bad} outside vocabulary of {}", t.vocab_size)));
        }
    }
    let width = cfg.embed_dim;
    let device = p.device();
    let ids: Vec<u32> = tokens.iter().flat_map(|s| s.ids.iter().copied()).collect();
    let ids = Tensor::from_vec(ids, k * len, device)?;
    let x = p
        .get("text.token_embedding")?
        .index_select(&ids, 0)?
        .reshape((k, len, width))?;
    let mut x = x.broadcast_add(&p.get("text.positional_embedding")?)?;

    let bank = prompts.map(|pc| PromptBank::new(p, pc, cfg, Tower::Text));
    let n_prompt = bank.map_or(0, |b| b.n_tokens);
    let seq_len = n_prompt + len;
    let mask = causal_mask(seq_len, p.dtype(), device)?;
    for l in 0..t.layers {
        if let Some(bank) = &bank {
            x = inject(l, &x, bank)?;
        }
        x = block(&x, p, &format!("text.blocks.{l}"), t.heads, Some(&mask))?;
    }
    let eos: Vec<u32> = tokens
        .iter()
        .enumerate()
        .map(|(i, s)| (i * seq_len + n_prompt + s.eos_index) as u32)
        .collect();
    let eos = Tensor::from_vec(eos, k, device)?;
    let x = x.reshape((k * seq_len, width))?.index_select(&eos, 0)?;
    let x = ln(&x, p, "text.ln_final")?;
    Ok(x.matmul(&p.get("text.proj")?)?)
}
