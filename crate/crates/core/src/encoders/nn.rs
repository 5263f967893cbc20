//! Pre-norm transformer building blocks shared by both towers.

use candle_core::{Tensor, D};
use rand::Rng;

use super::params::{trunc_normal, ParameterStore};
use crate::error::Result;

const LN_EPS: f64 = 1e-5;
pub(crate) const INIT_STD: f64 = 0.02;

/// Scale-aware std for a `width`-wide tensor: `width^-0.5`.
pub(crate) fn width_std(width: usize) -> f64 {
    (width as f64).powf(-0.5)
}

/// `x[.., in] @ w[in, out] + b[out]`, flattening all leading dims.
pub(crate) fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let (in_dim, out_dim) = w.dims2()?;
    let rows = x.elem_count() / in_dim;
    let y = x.reshape((rows, in_dim))?.matmul(w)?;
    let y = match b {
        Some(b) => y.broadcast_add(b)?,
        None => y,
    };
    let mut out_dims = dims;
    *out_dims.last_mut().expect("non-scalar input") = out_dim;
    Ok(y.reshape(out_dims)?)
}

pub(crate) fn layer_norm(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let xc = x.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
    let y = xc.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
    Ok(y.broadcast_mul(w)?.broadcast_add(b)?)
}

/// Softmax over the last axis. The max shift is detached: softmax is
/// shift-invariant, so the gradient is unaffected.
pub(crate) fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub(crate) fn ln(x: &Tensor, p: &ParameterStore, prefix: &str) -> Result<Tensor> {
    layer_norm(
        x,
        &p.get(&format!("{prefix}.weight"))?,
        &p.get(&format!("{prefix}.bias"))?,
    )
}

fn linear_named(x: &Tensor, p: &ParameterStore, prefix: &str) -> Result<Tensor> {
    linear(
        x,
        &p.get(&format!("{prefix}.weight"))?,
        Some(&p.get(&format!("{prefix}.bias"))?),
    )
}

/// Multi-head self-attention over `x: [n, s, w]`; `mask` is an additive `[s, s]` bias.
fn attention(
    x: &Tensor,
    p: &ParameterStore,
    prefix: &str,
    heads: usize,
    mask: Option<&Tensor>,
) -> Result<Tensor> {
    let (n, s, w) = x.dims3()?;
    let dh = w / heads;
    let qkv = linear_named(x, p, &format!("{prefix}.qkv"))?;
    let split = |i: usize| -> Result<Tensor> {
        Ok(qkv
            .narrow(2, i * w, w)?
            .reshape((n, s, heads, dh))?
            .transpose(1, 2)?
            .contiguous()?)
    };
    let (q, k, v) = (split(0)?, split(1)?, split(2)?);
    let scores = (q.matmul(&k.t()?)? * (1.0 / (dh as f64).sqrt()))?;
    let scores = match mask {
        Some(m) => scores.broadcast_add(m)?,
        None => scores,
    };
    let probs = softmax_last(&scores)?;
    let out = probs.matmul(&v)?.transpose(1, 2)?.reshape((n, s, w))?;
    linear_named(&out, p, &format!("{prefix}.out"))
}

pub(crate) fn block(
    x: &Tensor,
    p: &ParameterStore,
    prefix: &str,
    heads: usize,
    mask: Option<&Tensor>,
) -> Result<Tensor> {
    let h = ln(x, p, &format!("{prefix}.ln_1"))?;
    let x = (x + attention(&h, p, &format!("{prefix}.attn"), heads, mask)?)?;
    let h = ln(&x, p, &format!("{prefix}.ln_2"))?;
    let h = linear_named(&h, p, &format!("{prefix}.mlp.fc1"))?.gelu()?;
    let h = linear_named(&h, p, &format!("{prefix}.mlp.fc2"))?;
    Ok((x + h)?)
}

pub(crate) fn init_linear(
    p: &mut ParameterStore,
    rng: &mut impl Rng,
    prefix: &str,
    in_dim: usize,
    out_dim: usize,
    std: f64,
) -> Result<()> {
    p.insert_values(
        format!("{prefix}.weight"),
        &[in_dim, out_dim],
        trunc_normal(rng, in_dim * out_dim, std),
    )?;
    p.insert_values(format!("{prefix}.bias"), &[out_dim], vec![0.0; out_dim])
}

pub(crate) fn init_layer_norm(p: &mut ParameterStore, prefix: &str, width: usize) -> Result<()> {
    p.insert_values(format!("{prefix}.weight"), &[width], vec![1.0; width])?;
    p.insert_values(format!("{prefix}.bias"), &[width], vec![0.0; width])
}

pub(crate) fn init_block(
    p: &mut ParameterStore,
    rng: &mut impl Rng,
    prefix: &str,
    width: usize,
    mlp_ratio: usize,
    layers: usize,
) -> Result<()> {
    // residual outputs shrink with depth so the stream keeps unit scale
    let attn_std = width_std(width);
    let out_std = attn_std * width_std(2 * layers);
    let fc_std = width_std(2 * width);
    init_layer_norm(p, &format!("{prefix}.ln_1"), width)?;
    init_linear(p, rng, &format!("{prefix}.attn.qkv"), width, 3 * width, attn_std)?;
    init_linear(p, rng, &format!("{prefix}.attn.out"), width, width, out_std)?;
    init_layer_norm(p, &format!("{prefix}.ln_2"), width)?;
    init_linear(p, rng, &format!("{prefix}.mlp.fc1"), width, width * mlp_ratio, fc_std)?;
    init_linear(p, rng, &format!("{prefix}.mlp.fc2"), width * mlp_ratio, width, out_std)
}
