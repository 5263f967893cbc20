//! Deterministic synthetic video corpus.
//!
//! Three class families stress different cues:
//! - `appearance`: one colored shape in every frame; any single frame decides the class.
//! - `compositional`: white shapes; pair classes show one shape in the first half of the
//!   clip and the other in the second half (order drawn per sample), singleton classes show
//!   one shape throughout. Only the frame multiset decides the class.
//! - `trajectory`: a white shape sweeps a horizontal or vertical axis; the middle frame
//!   sits at the same place for both axes.

mod sampling;
mod store;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use sampling::{
    crop_origin, extract_clip, make_views, sample_frames, segment_indices, stack_clips, train_clip, Clip,
    CropPosition, SampleMode, ViewSet,
};
pub use store::{
    read_sample_file, write_sample_file, ClassCounts, Dataset, DatasetManifest, Split, GENERATOR_VERSION, MANIFEST_FILE,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Appearance,
    Compositional,
    Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    White,
}

impl Color {
    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::White => "white",
        }
    }

    fn rgb(self) -> [f32; 3] {
        match self {
            Color::Red => [0.9, 0.15, 0.15],
            Color::Green => [0.15, 0.85, 0.2],
            Color::Blue => [0.2, 0.3, 0.95],
            Color::White => [0.9, 0.9, 0.9],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Horizontal,
    Vertical,
}

impl Axis {
    pub fn word(self) -> &'static str {
        match self {
            Axis::Horizontal => "horizontally",
            Axis::Vertical => "vertically",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub family: Family,
    pub shapes: Vec<Shape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<Color>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<Axis>,
}

impl ClassSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::config(format!("class `{}`: {msg}", self.name)));
        if self.name.trim().is_empty() {
            return bad("empty name");
        }
        match self.family {
            Family::Appearance if self.shapes.len() != 1 || self.color.is_none() => {
                bad("appearance classes need exactly one shape and a color")
            }
            Family::Compositional if self.shapes.is_empty() || self.shapes.len() > 2 => {
                bad("compositional classes need one or two shapes")
            }
            Family::Trajectory if self.shapes.len() != 1 || self.axis.is_none() => {
                bad("trajectory classes need one shape and an axis")
            }
            _ => Ok(()),
        }
    }
}

/// The 19-class default roster: 9 appearance, 6 compositional, 4 trajectory.
pub fn default_roster() -> Vec<ClassSpec> {
    let mut out = Vec::with_capacity(19);
    for color in [Color::Red, Color::Green, Color::Blue] {
        for shape in Shape::ALL {
            out.push(ClassSpec {
                name: format!("{} {}", color.word(), shape.word()),
                family: Family::Appearance,
                shapes: vec![shape],
                color: Some(color),
                axis: None,
            });
        }
    }
    for (a, b) in [
        (Shape::Circle, Shape::Square),
        (Shape::Circle, Shape::Triangle),
        (Shape::Square, Shape::Triangle),
    ] {
        out.push(ClassSpec {
            name: format!("{} with {}", a.word(), b.word()),
            family: Family::Compositional,
            shapes: vec![a, b],
            color: None,
            axis: None,
        });
    }
    for shape in Shape::ALL {
        out.push(ClassSpec {
            name: format!("{} alone", shape.word()),
            family: Family::Compositional,
            shapes: vec![shape],
            color: None,
            axis: None,
        });
    }
    for shape in [Shape::Circle, Shape::Square] {
        for axis in [Axis::Horizontal, Axis::Vertical] {
            out.push(ClassSpec {
                name: format!("{} moving {}", shape.word(), axis.word()),
                family: Family::Trajectory,
                shapes: vec![shape],
                color: None,
                axis: Some(axis),
            });
        }
    }
    out
}

/// Raw clip geometry and nuisance parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub frames: usize,
    pub size: usize,
    pub channels: usize,
    pub noise: f32,
    pub color_jitter: f32,
    pub background: f32,
    /// Object radius as a fraction of the frame size.
    pub object_radius: f32,
    /// Per-sample placement jitter as a fraction of the frame size.
    pub position_jitter: f32,
    /// Half-length of the trajectory sweep as a fraction of the frame size.
    pub sweep: f32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            frames: 32,
            size: 40,
            channels: 3,
            noise: 0.05,
            color_jitter: 0.1,
            background: 0.1,
            object_radius: 0.2,
            position_jitter: 0.075,
            sweep: 0.15,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.size < 4 {
            return Err(Error::config("data.generator needs frames >= 1 and size >= 4"));
        }
        if self.channels != 3 {
            return Err(Error::config("data.generator.channels must be 3 (RGB)"));
        }
        for (name, v) in [
            ("noise", self.noise),
            ("color_jitter", self.color_jitter),
            ("background", self.background),
            ("object_radius", self.object_radius),
            ("position_jitter", self.position_jitter),
            ("sweep", self.sweep),
        ] {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(Error::config(format!("data.generator.{name} must be in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// One raw clip: `T x H x W x C` pixels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub video_id: u64,
    pub class_id: usize,
    pub sample_seed: u64,
    pub shape: [usize; 4],
    pub frames: Vec<f32>,
}

impl VideoSample {
    pub fn num_frames(&self) -> usize {
        self.shape[0]
    }

    pub fn frame_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }
}

/// SplitMix64 finalizer folded over `parts`.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn inside(shape: Shape, dx: f32, dy: f32, r: f32) -> bool {
    match shape {
        Shape::Circle => dx * dx + dy * dy <= r * r,
        Shape::Square => {
            let h = 0.85 * r;
            dx.abs() <= h && dy.abs() <= h
        }
        Shape::Triangle => {
            // apex up at -r, flat base at +0.8r, half-width r at the base
            if !(-r..=0.8 * r).contains(&dy) {
                return false;
            }
            dx.abs() <= (dy + r) / 1.8
        }
    }
}

fn draw(frame: &mut [f32], size: usize, shape: Shape, cx: f32, cy: f32, r: f32, rgb: [f32; 3]) {
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            if inside(shape, dx, dy, r) {
                let o = (y * size + x) * 3;
                frame[o..o + 3].copy_from_slice(&rgb);
            }
        }
    }
}

/// Integer pixel offset of the trajectory at frame `t` of `frames`.
fn sweep_offset(t: usize, frames: usize, amplitude: f32) -> f32 {
    if frames < 2 {
        return 0.0;
    }
    let u = (2.0 * t as f32 - (frames as f32 - 1.0)) / (frames as f32 - 1.0);
    (amplitude * u).round()
}

/// Render one clip of `spec`. Fully determined by `(spec, gen, sample_seed)`.
pub fn generate(spec: &ClassSpec, gen: &GeneratorConfig, sample_seed: u64) -> Result<Vec<f32>> {
    spec.validate()?;
    gen.validate()?;
    let (t_raw, size) = (gen.frames, gen.size);
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    // Every family consumes the same draws in the same order, so samples that
    // share a seed share jitter and noise.
    let jitter: [f32; 3] = std::array::from_fn(|_| rng.gen_range(-1.0f32..=1.0) * gen.color_jitter);
    let sz = size as f32;
    let pj = gen.position_jitter * sz;
    let (jx, jy) = (rng.gen_range(-1.0f32..=1.0) * pj, rng.gen_range(-1.0f32..=1.0) * pj);
    let swap: bool = rng.gen();

    let base = spec.color.unwrap_or(Color::White).rgb();
    let rgb: [f32; 3] = std::array::from_fn(|c| (base[c] + jitter[c]).clamp(0.0, 1.0));
    let r = gen.object_radius * sz;
    let (cx0, cy0) = (sz / 2.0 + jx, sz / 2.0 + jy);
    let frame_len = size * size * 3;
    let mut out = vec![gen.background; t_raw * frame_len];

    for t in 0..t_raw {
        let frame = &mut out[t * frame_len..(t + 1) * frame_len];
        let (shape, cx, cy) = match spec.family {
            Family::Appearance => (spec.shapes[0], cx0, cy0),
            Family::Compositional => {
                let first_half = t < t_raw.div_ceil(2);
                let idx = if spec.shapes.len() == 1 || (first_half != swap) { 0 } else { 1 };
                (spec.shapes[idx], cx0, cy0)
            }
            Family::Trajectory => {
                let off = sweep_offset(t, t_raw, gen.sweep * sz);
                match spec.axis.expect("validated") {
                    Axis::Horizontal => (spec.shapes[0], cx0 + off, cy0),
                    Axis::Vertical => (spec.shapes[0], cx0, cy0 + off),
                }
            }
        };
        draw(frame, size, shape, cx, cy, r, rgb);
    }
    for v in out.iter_mut() {
        *v = (*v + rng.gen_range(-1.0f32..=1.0) * gen.noise).clamp(0.0, 1.0);
    }
    Ok(out)
}

pub fn generate_sample(
    spec: &ClassSpec,
    class_id: usize,
    gen: &GeneratorConfig,
    sample_seed: u64,
    video_id: u64,
) -> Result<VideoSample> {
    Ok(VideoSample {
        video_id,
        class_id,
        sample_seed,
        shape: [gen.frames, gen.size, gen.size, gen.channels],
        frames: generate(spec, gen, sample_seed)?,
    })
}

#[cfg(test)]
pub(crate) mod detect {
    //! Pixel-level shape detector used as an independent oracle on generated frames.
    use super::Shape;

    /// Classify the single bright object in an RGB frame by bounding-box fill ratio.
    pub fn detect_shape(frame: &[f32], size: usize) -> Option<Shape> {
        let (mut x0, mut y0, mut x1, mut y1, mut count) = (usize::MAX, usize::MAX, 0, 0, 0usize);
        for y in 0..size {
            for x in 0..size {
                let o = (y * size + x) * 3;
                let m = frame[o].max(frame[o + 1]).max(frame[o + 2]);
                if m > 0.45 {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                    count += 1;
                }
            }
        }
        if count == 0 {
            return None;
        }
        let area = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f32;
        let fill = count as f32 / area;
        Some(if fill > 0.9 {
            Shape::Square
        } else if fill > 0.65 {
            Shape::Circle
        } else {
            Shape::Triangle
        })
    }

    /// Centroid of the bright object.
    pub fn centroid(frame: &[f32], size: usize) -> (f32, f32) {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for y in 0..size {
            for x in 0..size {
                let o = (y * size + x) * 3;
                if frame[o].max(frame[o + 1]).max(frame[o + 2]) > 0.45 {
                    sx += x as f32;
                    sy += y as f32;
                    n += 1.0;
                }
            }
        }
        (sx / n, sy / n)
    }
}
