//! Sparse segment-based frame sampling, spatial crops and multi-view clips.

use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VideoSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// One uniformly random frame per segment.
    Train,
    /// The center frame of each segment.
    Eval,
}

/// Frame indices for `t` segments over `t_raw` frames.
///
/// Segment `j` spans `[floor(j*t_raw/t), floor((j+1)*t_raw/t))`; eval mode picks
/// `floor((2j+1)*t_raw/(2t))`.
pub fn segment_indices(t_raw: usize, t: usize, mode: SampleMode, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if t == 0 || t > t_raw {
        return Err(Error::config(format!("cannot sample {t} frames from {t_raw}")));
    }
    Ok((0..t)
        .map(|j| match mode {
            SampleMode::Eval => (2 * j + 1) * t_raw / (2 * t),
            SampleMode::Train => {
                let lo = j * t_raw / t;
                let hi = (j + 1) * t_raw / t;
                rng.gen_range(lo..hi)
            }
        })
        .collect())
}

/// A `T x h x w x C` clip cut from a video.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub shape: [usize; 4],
    pub data: Vec<f32>,
}

impl Clip {
    pub fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.data, &self.shape[..], &Device::Cpu)?)
    }
}

/// Stack equally shaped clips into `[B, T, h, w, C]`.
pub fn stack_clips(clips: &[Clip]) -> Result<Tensor> {
    let first = clips.first().ok_or_else(|| Error::data("no clips to stack"))?;
    if clips.iter().any(|c| c.shape != first.shape) {
        return Err(Error::shape("clips have different shapes"));
    }
    let data: Vec<f32> = clips.iter().flat_map(|c| c.data.iter().copied()).collect();
    let [t, h, w, c] = first.shape;
    Ok(Tensor::from_vec(data, (clips.len(), t, h, w, c), &Device::Cpu)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropPosition {
    Center,
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl CropPosition {
    /// Declared grid order used by multi-view inference.
    pub const GRID: [CropPosition; 5] = [
        CropPosition::Center,
        CropPosition::TopLeft,
        CropPosition::TopRight,
        CropPosition::BottomLeft,
        CropPosition::BottomRight,
    ];
}

/// Top-left `(y, x)` of a `crop x crop` window at `pos` in an `h x w` frame.
pub fn crop_origin(pos: CropPosition, h: usize, w: usize, crop: usize) -> Result<(usize, usize)> {
    if crop == 0 || crop > h || crop > w {
        return Err(Error::config(format!("crop {crop} does not fit a {h}x{w} frame")));
    }
    let (dy, dx) = (h - crop, w - crop);
    Ok(match pos {
        CropPosition::Center => (dy / 2, dx / 2),
        CropPosition::TopLeft => (0, 0),
        CropPosition::TopRight => (0, dx),
        CropPosition::BottomLeft => (dy, 0),
        CropPosition::BottomRight => (dy, dx),
    })
}

pub fn extract_clip(video: &VideoSample, indices: &[usize], origin: (usize, usize), crop: usize) -> Result<Clip> {
    let [t_raw, h, w, c] = video.shape;
    if origin.0 + crop > h || origin.1 + crop > w {
        return Err(Error::config(format!("crop at {origin:?} of size {crop} leaves the {h}x{w} frame")));
    }
    let mut data = Vec::with_capacity(indices.len() * crop * crop * c);
    for &t in indices {
        if t >= t_raw {
            return Err(Error::shape(format!("frame {t} out of {t_raw}")));
        }
        let frame = video.frame(t);
        for y in origin.0..origin.0 + crop {
            let row = (y * w + origin.1) * c;
            data.extend_from_slice(&frame[row..row + crop * c]);
        }
    }
    Ok(Clip {
        shape: [indices.len(), crop, crop, c],
        data,
    })
}

/// Sparse-sample `t` full-resolution frames.
pub fn sample_frames(video: &VideoSample, t: usize, mode: SampleMode, seed: u64) -> Result<Clip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = segment_indices(video.num_frames(), t, mode, &mut rng)?;
    extract_clip(video, &idx, (0, 0), video.shape[1].min(video.shape[2]))
}

/// Training clip: random frame per segment and a random crop from the grid.
pub fn train_clip(video: &VideoSample, t: usize, crop: usize, rng: &mut impl Rng) -> Result<Clip> {
    let idx = segment_indices(video.num_frames(), t, SampleMode::Train, rng)?;
    let pos = CropPosition::GRID[rng.gen_range(0..CropPosition::GRID.len())];
    let origin = crop_origin(pos, video.shape[1], video.shape[2], crop)?;
    extract_clip(video, &idx, origin, crop)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSet {
    pub spatial_crops: usize,
    pub temporal_clips: usize,
    pub crop_size: usize,
    pub frames_per_clip: usize,
}

impl ViewSet {
    pub fn single(crop_size: usize, frames_per_clip: usize) -> Self {
        Self {
            spatial_crops: 1,
            temporal_clips: 1,
            crop_size,
            frames_per_clip,
        }
    }

    pub fn num_views(&self) -> usize {
        self.spatial_crops * self.temporal_clips
    }

    pub fn validate(&self, t_raw: usize, size: usize) -> Result<()> {
        if self.spatial_crops == 0 || self.spatial_crops > CropPosition::GRID.len() {
            return Err(Error::config(format!(
                "spatial_crops must be in 1..={}",
                CropPosition::GRID.len()
            )));
        }
        if self.temporal_clips == 0 {
            return Err(Error::config("temporal_clips must be >= 1"));
        }
        if self.crop_size == 0 || self.crop_size > size {
            return Err(Error::config(format!("crop {} larger than frame {size}", self.crop_size)));
        }
        if self.frames_per_clip == 0 || self.frames_per_clip > t_raw {
            return Err(Error::config(format!(
                "frames_per_clip {} outside 1..={t_raw}",
                self.frames_per_clip
            )));
        }
        Ok(())
    }
}

/// Spatial-major list of `spatial_crops x temporal_clips` clips. Temporal clip `c`
/// of `n` takes frame `floor((j + (c + 0.5)/n) * t_raw / t)` from segment `j`, so a
/// single clip is exactly the eval-mode sparse sample.
pub fn make_views(video: &VideoSample, vs: &ViewSet) -> Result<Vec<Clip>> {
    let [t_raw, h, w, _] = video.shape;
    vs.validate(t_raw, h.min(w))?;
    let t = vs.frames_per_clip;
    let n = vs.temporal_clips;
    let temporal: Vec<Vec<usize>> = (0..n)
        .map(|c| {
            (0..t)
                .map(|j| ((2 * n * j + 2 * c + 1) * t_raw) / (2 * n * t))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(vs.num_views());
    for &pos in &CropPosition::GRID[..vs.spatial_crops] {
        let origin = crop_origin(pos, h, w, vs.crop_size)?;
        for idx in &temporal {
            out.push(extract_clip(video, idx, origin, vs.crop_size)?);
        }
    }
    Ok(out)
}
