//! Temporal pooling, temperature-scaled cosine logits, the video-to-text
//! contrastive objective, the three frame-fusion levels and multi-view
//! logit averaging.

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::encoders::FrameEmbeddings;
use crate::error::{Error, Result};

/// Pooled clip-level embedding, unnormalized.
#[derive(Debug, Clone)]
pub struct VideoEmbedding {
    pub value: Tensor,
    pub video_id: u64,
}

#[derive(Debug, Clone)]
pub struct LogitMatrix {
    pub values: Tensor,
    pub temperature_applied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Average frame embeddings, then score.
    #[default]
    Embedding,
    /// Score every frame, then average logits.
    Decision,
    /// Score and supervise every frame on its own.
    Image,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Embedding, FusionMode::Decision, FusionMode::Image];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Embedding => "embedding",
            FusionMode::Decision => "decision",
            FusionMode::Image => "image",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(FusionMode::Embedding),
            "decision" => Ok(FusionMode::Decision),
            "image" => Ok(FusionMode::Image),
            other => Err(Error::InvalidMode(other.to_string())),
        }
    }
}

pub fn temporal_pool(x: &FrameEmbeddings) -> Result<VideoEmbedding> {
    let (t, _) = x.values.dims2()?;
    if t == 0 {
        return Err(Error::EmptyVideo);
    }
    Ok(VideoEmbedding {
        value: x.values.mean(0)?,
        video_id: x.source_video_id,
    })
}

/// Batched temporal pooling: `[B, T, D] -> [B, D]`.
pub fn pool_frames(x: &Tensor) -> Result<Tensor> {
    let (_, t, _) = x.dims3()?;
    if t == 0 {
        return Err(Error::EmptyVideo);
    }
    Ok(x.mean(1)?)
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Scale each row to unit L2 norm.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

/// Cosine similarity of every row of `a: [.., D]` with every row of `b: [K, D]`.
pub fn cosine_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let a = l2_normalize(a)?;
    let b = l2_normalize(b)?;
    let dims = a.dims().to_vec();
    let d = *dims.last().ok_or_else(|| Error::shape("scalar embedding"))?;
    let (k, db) = b.dims2()?;
    if d != db {
        return Err(Error::shape(format!("embedding widths {d} and {db} differ")));
    }
    let rows = a.elem_count() / d;
    let sim = a.reshape((rows, d))?.matmul(&b.t()?)?;
    let mut out = dims;
    *out.last_mut().expect("checked above") = k;
    Ok(sim.reshape(out)?)
}

/// `1/tau` as a scalar tensor of the given dtype.
pub fn inverse_temperature(tau: f64, dtype: DType) -> Result<Tensor> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidTemperature(tau));
    }
    Ok(Tensor::new(1.0 / tau, &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

/// `exp(logit_scale)`, the learnable inverse temperature.
pub fn scale_from_logit(logit_scale: &Tensor) -> Result<Tensor> {
    Ok(logit_scale.exp()?)
}

/// `logits[i, j] = cos(v_i, t_j) / tau`.
pub fn logits(videos: &Tensor, texts: &Tensor, tau: f64) -> Result<LogitMatrix> {
    let scale = inverse_temperature(tau, videos.dtype())?;
    Ok(LogitMatrix {
        values: scaled_logits(videos, texts, &scale)?,
        temperature_applied: true,
    })
}

/// Differentiable `cos(v, t) * scale` for a scalar `scale = 1/tau`.
pub fn scaled_logits(videos: &Tensor, texts: &Tensor, scale: &Tensor) -> Result<Tensor> {
    Ok(cosine_matrix(videos, texts)?.broadcast_mul(scale)?)
}

/// Mean and sum of the cross-entropy terms of one objective evaluation.
#[derive(Debug, Clone)]
pub struct Loss {
    pub mean: Tensor,
    pub sum: Tensor,
}

/// Row-wise softmax cross-entropy with an explicit positive column per row.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<Loss> {
    let (rows, cols) = logits.dims2()?;
    if rows != targets.len() {
        return Err(Error::shape(format!("{rows} logit rows but {} targets", targets.len())));
    }
    if rows == 0 {
        return Err(Error::shape("empty logit matrix"));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
        return Err(Error::shape(format!("target column {bad} out of {cols}")));
    }
    let m = logits.max_keepdim(D::Minus1)?.detach();
    let shifted = logits.broadcast_sub(&m)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    let log_probs = shifted.broadcast_sub(&lse)?;
    let mut onehot = vec![0.0f64; rows * cols];
    for (r, &t) in targets.iter().enumerate() {
        onehot[r * cols + t] = 1.0;
    }
    let onehot = Tensor::from_vec(onehot, (rows, cols), logits.device())?.to_dtype(logits.dtype())?;
    let picked = (log_probs * onehot)?.sum(D::Minus1)?;
    let sum = picked.sum_all()?.neg()?;
    let mean = (&sum / rows as f64)?;
    Ok(Loss { mean, sum })
}

/// Video-to-text contrastive loss over a square `B x B` logit matrix whose
/// diagonal holds the positives; mean over rows.
pub fn contrastive_loss(logits: &Tensor) -> Result<Tensor> {
    Ok(contrastive_loss_parts(logits)?.mean)
}

pub fn contrastive_loss_parts(logits: &Tensor) -> Result<Loss> {
    let (b, k) = logits.dims2()?;
    if b != k {
        return Err(Error::shape(format!("contrastive loss needs a square matrix, got {b}x{k}")));
    }
    let targets: Vec<usize> = (0..b).collect();
    cross_entropy(logits, &targets)
}

/// Logits produced under one fusion level.
#[derive(Debug, Clone)]
pub struct FusedLogits {
    pub logits: LogitMatrix,
    /// For image-level fusion: the video each logit row came from.
    pub frame_to_video: Option<Vec<usize>>,
}

impl FusedLogits {
    /// Per-video logits; image-level rows are averaged over each video's frames.
    pub fn video_logits(&self) -> Result<Tensor> {
        match &self.frame_to_video {
            None => Ok(self.logits.values.clone()),
            Some(map) => {
                let (rows, k) = self.logits.values.dims2()?;
                let b = map.iter().max().map_or(0, |m| m + 1);
                if rows == 0 || rows % b != 0 {
                    return Err(Error::shape("ragged frame-to-video map"));
                }
                Ok(self.logits.values.reshape((b, rows / b, k))?.mean(1)?)
            }
        }
    }
}

/// Score clips `[B, T, D]` against texts `[K, D]` under the given fusion level.
/// `scale` is the scalar inverse temperature.
pub fn fuse_and_score(frames: &Tensor, texts: &Tensor, scale: &Tensor, mode: FusionMode) -> Result<FusedLogits> {
    let (b, t, d) = frames.dims3()?;
    if t == 0 {
        return Err(Error::EmptyVideo);
    }
    let (_, dt) = texts.dims2()?;
    if d != dt {
        return Err(Error::shape(format!("frame width {d} vs text width {dt}")));
    }
    let (values, map) = match mode {
        FusionMode::Embedding => (scaled_logits(&pool_frames(frames)?, texts, scale)?, None),
        FusionMode::Decision => (scaled_logits(frames, texts, scale)?.mean(1)?, None),
        FusionMode::Image => {
            let per_frame = scaled_logits(&frames.reshape((b * t, d))?, texts, scale)?;
            let map = (0..b).flat_map(|i| std::iter::repeat_n(i, t)).collect();
            (per_frame, Some(map))
        }
    };
    Ok(FusedLogits {
        logits: LogitMatrix {
            values,
            temperature_applied: true,
        },
        frame_to_video: map,
    })
}

/// Training objective: clip `i` is paired with text row `i` (`texts` is `[B, D]`).
/// Image-level fusion supervises each frame with its own video's text.
pub fn fusion_loss(frames: &Tensor, texts: &Tensor, scale: &Tensor, mode: FusionMode) -> Result<Loss> {
    let fused = fuse_and_score(frames, texts, scale, mode)?;
    match &fused.frame_to_video {
        None => contrastive_loss_parts(&fused.logits.values),
        Some(map) => {
            let (b, _, _) = frames.dims3()?;
            let (_, k) = fused.logits.values.dims2()?;
            if k != b {
                return Err(Error::shape(format!("{b} clips but {k} texts")));
            }
            cross_entropy(&fused.logits.values, map)
        }
    }
}

/// Cross-entropy of clips `[B, T, D]` against class texts `[K, D]`, clip `i`
/// labelled `labels[i]`. Image-level fusion supervises every frame with its
/// clip's label.
pub fn classification_loss(
    frames: &Tensor,
    texts: &Tensor,
    scale: &Tensor,
    labels: &[usize],
    mode: FusionMode,
) -> Result<Loss> {
    let (b, _, _) = frames.dims3()?;
    if labels.len() != b {
        return Err(Error::shape(format!("{b} clips but {} labels", labels.len())));
    }
    let fused = fuse_and_score(frames, texts, scale, mode)?;
    match &fused.frame_to_video {
        None => cross_entropy(&fused.logits.values, labels),
        Some(map) => {
            let targets: Vec<usize> = map.iter().map(|&v| labels[v]).collect();
            cross_entropy(&fused.logits.values, &targets)
        }
    }
}

/// Average `B x K` logits over views.
pub fn multi_view_logits(views: &[Tensor]) -> Result<Tensor> {
    let first = views.first().ok_or(Error::EmptyViews)?;
    if views.iter().any(|v| v.dims() != first.dims()) {
        return Err(Error::shape("views have inconsistent shapes"));
    }
    Ok(Tensor::stack(views, 0)?.mean(0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t2(rows: &[&[f64]]) -> Tensor {
        let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        Tensor::new(v, &Device::Cpu).unwrap()
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn scalar(t: &Tensor) -> f64 {
        t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn pool_examples() {
        let x = FrameEmbeddings {
            values: t2(&[&[1.0, 0.0], &[0.0, 1.0]]),
            source_video_id: 3,
        };
        let v = temporal_pool(&x).unwrap();
        assert_eq!(v.value.to_vec1::<f64>().unwrap(), vec![0.5, 0.5]);
        assert_eq!(v.video_id, 3);

        let same = FrameEmbeddings {
            values: t2(&[&[0.3, -2.0], &[0.3, -2.0], &[0.3, -2.0]]),
            source_video_id: 0,
        };
        let p = temporal_pool(&same).unwrap().value.to_vec1::<f64>().unwrap();
        assert!((p[0] - 0.3).abs() < 1e-15 && (p[1] + 2.0).abs() < 1e-15);

        let empty = FrameEmbeddings {
            values: Tensor::zeros((0, 2), DType::F64, &Device::Cpu).unwrap(),
            source_video_id: 0,
        };
        assert!(matches!(temporal_pool(&empty), Err(Error::EmptyVideo)));
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_sim(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!((cosine_sim(&[1.0, 2.0], &[2.0, 1.0]).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm)));
    }

    #[test]
    fn logits_match_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = rand_tensor(&mut rng, &[3, 5]);
        let t = rand_tensor(&mut rng, &[4, 5]);
        let got = logits(&v, &t, 0.07).unwrap();
        assert!(got.temperature_applied);
        let got = got.values.to_vec2::<f64>().unwrap();
        let (vr, tr) = (v.to_vec2::<f64>().unwrap(), t.to_vec2::<f64>().unwrap());
        for i in 0..3 {
            for j in 0..4 {
                let want = cosine_sim(&vr[i], &tr[j]).unwrap() / 0.07;
                assert!((got[i][j] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn logits_single_pair_and_bad_temperature() {
        let v = t2(&[&[0.2, 0.4]]);
        let l = logits(&v, &v, 0.5).unwrap().values.to_vec2::<f64>().unwrap();
        assert!((l[0][0] - 2.0).abs() < 1e-12);
        assert!(matches!(logits(&v, &v, 0.0), Err(Error::InvalidTemperature(_))));
        assert!(matches!(logits(&v, &v, -1.0), Err(Error::InvalidTemperature(_))));
    }

    #[test]
    fn halving_tau_doubles_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = rand_tensor(&mut rng, &[4, 6]);
        let t = rand_tensor(&mut rng, &[5, 6]);
        let a = logits(&v, &t, 0.2).unwrap().values.to_vec2::<f64>().unwrap();
        let b = logits(&v, &t, 0.1).unwrap().values.to_vec2::<f64>().unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((2.0 * x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(scalar(&contrastive_loss(&t2(&[&[3.7]])).unwrap()), 0.0);
        let uniform = Tensor::full(0.25f64, (4, 4), &Device::Cpu).unwrap();
        assert!((scalar(&contrastive_loss(&uniform).unwrap()) - 4f64.ln()).abs() < 1e-12);
        let l = scalar(&contrastive_loss(&t2(&[&[2.0, 0.0], &[0.0, 2.0]])).unwrap());
        let want = -((2f64).exp() / ((2f64).exp() + 1.0)).ln();
        assert!((l - want).abs() < 1e-12);
        assert!((l - 0.1269).abs() < 1e-4);
        assert!(matches!(
            contrastive_loss(&Tensor::zeros((2, 3), DType::F64, &Device::Cpu).unwrap()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn loss_sum_is_batch_times_mean() {
        let l = contrastive_loss_parts(&t2(&[&[1.0, 0.5, 0.0], &[0.0, 0.2, 0.1], &[3.0, 0.0, -1.0]])).unwrap();
        assert!((scalar(&l.sum) - 3.0 * scalar(&l.mean)).abs() < 1e-12);
    }

    #[test]
    fn raising_a_diagonal_logit_lowers_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = rand_tensor(&mut rng, &[4, 4]).to_vec2::<f64>().unwrap();
        let l0 = scalar(&contrastive_loss(&Tensor::new(base.clone(), &Device::Cpu).unwrap()).unwrap());
        let mut up = base;
        up[2][2] += 0.5;
        let l1 = scalar(&contrastive_loss(&Tensor::new(up, &Device::Cpu).unwrap()).unwrap());
        assert!(l1 < l0);
    }

    #[test]
    fn single_frame_modes_coincide_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frames = rand_tensor(&mut rng, &[3, 1, 6]);
        let texts = rand_tensor(&mut rng, &[4, 6]);
        let scale = inverse_temperature(0.07, DType::F64).unwrap();
        let outs: Vec<_> = FusionMode::ALL
            .iter()
            .map(|&m| {
                fuse_and_score(&frames, &texts, &scale, m)
                    .unwrap()
                    .video_logits()
                    .unwrap()
                    .to_vec2::<f64>()
                    .unwrap()
            })
            .collect();
        assert_eq!(outs[0], outs[1]);
        assert_eq!(outs[0], outs[2]);
    }

    #[test]
    fn identical_frames_make_embedding_and_decision_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let one = rand_tensor(&mut rng, &[2, 1, 6]);
        let frames = one.repeat((1, 5, 1)).unwrap();
        let texts = rand_tensor(&mut rng, &[3, 6]);
        let scale = inverse_temperature(0.1, DType::F64).unwrap();
        let e = fuse_and_score(&frames, &texts, &scale, FusionMode::Embedding).unwrap().video_logits().unwrap();
        let d = fuse_and_score(&frames, &texts, &scale, FusionMode::Decision).unwrap().video_logits().unwrap();
        let diff = (e - d).unwrap().abs().unwrap().max_all().unwrap();
        assert!(scalar(&diff) < 1e-6);
    }

    #[test]
    fn decision_mode_matches_per_frame_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let frames = rand_tensor(&mut rng, &[2, 4, 5]);
        let texts = rand_tensor(&mut rng, &[3, 5]);
        let tau = 0.05;
        let scale = inverse_temperature(tau, DType::F64).unwrap();
        let got = fuse_and_score(&frames, &texts, &scale, FusionMode::Decision)
            .unwrap()
            .video_logits()
            .unwrap()
            .to_vec2::<f64>()
            .unwrap();
        let fr = frames.to_vec3::<f64>().unwrap();
        let tr = texts.to_vec2::<f64>().unwrap();
        for b in 0..2 {
            for k in 0..3 {
                let want = (0..4).map(|t| cosine_sim(&fr[b][t], &tr[k]).unwrap() / tau).sum::<f64>() / 4.0;
                assert!((got[b][k] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn image_mode_keeps_frames_apart() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let frames = rand_tensor(&mut rng, &[2, 3, 4]);
        let texts = rand_tensor(&mut rng, &[2, 4]);
        let scale = inverse_temperature(1.0, DType::F64).unwrap();
        let f = fuse_and_score(&frames, &texts, &scale, FusionMode::Image).unwrap();
        assert_eq!(f.logits.values.dims(), &[6, 2]);
        assert_eq!(f.frame_to_video.as_deref(), Some(&[0, 0, 0, 1, 1, 1][..]));
        let loss = fusion_loss(&frames, &texts, &scale, FusionMode::Image).unwrap();
        assert!(scalar(&loss.mean) > 0.0);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("decision".parse::<FusionMode>().unwrap(), FusionMode::Decision);
        assert!(matches!("late".parse::<FusionMode>(), Err(Error::InvalidMode(m)) if m == "late"));
    }

    #[test]
    fn multi_view_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = rand_tensor(&mut rng, &[2, 3]);
        assert_eq!(
            multi_view_logits(std::slice::from_ref(&a)).unwrap().to_vec2::<f64>().unwrap(),
            a.to_vec2::<f64>().unwrap()
        );
        let z = multi_view_logits(&[a.clone(), a.neg().unwrap()]).unwrap();
        assert!(z.to_vec2::<f64>().unwrap().iter().flatten().all(|&v| v == 0.0));
        assert!(matches!(multi_view_logits(&[]), Err(Error::EmptyViews)));

        let views: Vec<Tensor> = (0..3).map(|_| rand_tensor(&mut rng, &[2, 3])).collect();
        let got = multi_view_logits(&views).unwrap().to_vec2::<f64>().unwrap();
        let raw: Vec<Vec<Vec<f64>>> = views.iter().map(|v| v.to_vec2::<f64>().unwrap()).collect();
        for i in 0..2 {
            for j in 0..3 {
                let want = (raw[0][i][j] + raw[1][i][j] + raw[2][i][j]) / 3.0;
                assert!((got[i][j] - want).abs() < 1e-6);
            }
        }
    }
}
