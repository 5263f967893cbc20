//! Dataset manifests and the on-disk sample format.
//!
//! A dataset directory holds `manifest.json` plus one file per sample under
//! `samples/{train,val}/`. Each sample file is a single JSON header line
//! (`shape`, `dtype`, ids, seed) terminated by `\n`, followed by the pixels as
//! little-endian `f32` in row-major `T x H x W x C` order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{derive_seed, generate_sample, ClassSpec, GeneratorConfig, VideoSample};
use crate::error::{Error, Result};

pub const GENERATOR_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCounts {
    pub train: usize,
    pub val: usize,
}

/// Everything needed to regenerate a dataset bit-exactly. Class ids are
/// positions in `classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub generator_version: u32,
    pub global_seed: u64,
    pub generator: GeneratorConfig,
    pub classes: Vec<ClassSpec>,
    pub counts: Vec<ClassCounts>,
}

#[derive(Serialize)]
struct IdSource<'a> {
    generator_version: u32,
    global_seed: u64,
    generator: &'a GeneratorConfig,
    classes: &'a [ClassSpec],
    counts: &'a [ClassCounts],
}

impl DatasetManifest {
    pub fn new(classes: Vec<ClassSpec>, counts: Vec<ClassCounts>, generator: GeneratorConfig, global_seed: u64) -> Result<Self> {
        let mut m = Self {
            dataset_id: String::new(),
            generator_version: GENERATOR_VERSION,
            global_seed,
            generator,
            classes,
            counts,
        };
        m.validate_content()?;
        m.dataset_id = m.content_id()?;
        Ok(m)
    }

    /// Same counts for every class.
    pub fn uniform(classes: Vec<ClassSpec>, train: usize, val: usize, generator: GeneratorConfig, seed: u64) -> Result<Self> {
        let counts = vec![ClassCounts { train, val }; classes.len()];
        Self::new(classes, counts, generator, seed)
    }

    fn content_id(&self) -> Result<String> {
        let src = IdSource {
            generator_version: self.generator_version,
            global_seed: self.global_seed,
            generator: &self.generator,
            classes: &self.classes,
            counts: &self.counts,
        };
        let digest = Sha256::digest(serde_json::to_vec(&src)?);
        Ok(format!("synth-{}", &hex::encode(digest)[..12]))
    }

    fn validate_content(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::EmptyClassSet);
        }
        if self.counts.len() != self.classes.len() {
            return Err(Error::data("one count entry per class required"));
        }
        if self.counts.iter().any(|c| c.train == 0 || c.val == 0) {
            return Err(Error::data("every class needs at least one train and one val sample"));
        }
        let mut names: Vec<&str> = self.classes.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("class names must be unique"));
        }
        self.classes.iter().try_for_each(ClassSpec::validate)?;
        self.generator.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_content()?;
        if self.generator_version != GENERATOR_VERSION {
            return Err(Error::Integrity(format!(
                "manifest generator version {} != {GENERATOR_VERSION}",
                self.generator_version
            )));
        }
        if self.dataset_id != self.content_id()? {
            return Err(Error::Integrity("manifest dataset_id does not match its content".into()));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn sample_seed(&self, class_id: usize, split: Split, index: usize) -> u64 {
        let s = match split {
            Split::Train => 0,
            Split::Val => 1,
        };
        derive_seed(&[self.global_seed, class_id as u64, s, index as u64])
    }

    /// `(video_id, class_id, split, index)` for every sample in enumeration order:
    /// all train samples class by class, then all val samples.
    pub fn sample_refs(&self) -> Vec<(u64, usize, Split, usize)> {
        let mut out = Vec::new();
        let mut vid = 0u64;
        for split in [Split::Train, Split::Val] {
            for (cid, c) in self.counts.iter().enumerate() {
                let n = match split {
                    Split::Train => c.train,
                    Split::Val => c.val,
                };
                for i in 0..n {
                    out.push((vid, cid, split, i));
                    vid += 1;
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }
}

/// An in-memory dataset: manifest plus every decoded sample.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<VideoSample>,
    pub val: Vec<VideoSample>,
}

fn sample_path(dir: &Path, split: Split, class_id: usize, index: usize) -> PathBuf {
    dir.join("samples")
        .join(split.as_str())
        .join(format!("c{class_id:03}_{index:05}.bin"))
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleHeader {
    shape: [usize; 4],
    dtype: String,
    video_id: u64,
    class_id: usize,
    sample_seed: u64,
}

const DTYPE_TAG: &str = "<f4";

pub fn write_sample_file(path: &Path, sample: &VideoSample) -> Result<()> {
    let header = SampleHeader {
        shape: sample.shape,
        dtype: DTYPE_TAG.to_string(),
        video_id: sample.video_id,
        class_id: sample.class_id,
        sample_seed: sample.sample_seed,
    };
    let mut buf = serde_json::to_vec(&header)?;
    buf.push(b'\n');
    buf.reserve(sample.frames.len() * 4);
    for v in &sample.frames {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_sample_file(path: &Path) -> Result<VideoSample> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: SampleHeader = serde_json::from_str(line.trim_end())?;
    if header.dtype != DTYPE_TAG {
        return Err(Error::data(format!("{}: unsupported dtype {}", path.display(), header.dtype)));
    }
    let n: usize = header.shape.iter().product();
    let mut bytes = Vec::with_capacity(n * 4);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(Error::Integrity(format!(
            "{}: expected {} payload bytes, found {}",
            path.display(),
            n * 4,
            bytes.len()
        )));
    }
    let frames = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(VideoSample {
        video_id: header.video_id,
        class_id: header.class_id,
        sample_seed: header.sample_seed,
        shape: header.shape,
        frames,
    })
}

impl Dataset {
    /// Render every sample described by the manifest.
    pub fn generate(manifest: DatasetManifest) -> Result<Self> {
        manifest.validate()?;
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (vid, cid, split, i) in manifest.sample_refs() {
            let seed = manifest.sample_seed(cid, split, i);
            let s = generate_sample(&manifest.classes[cid], cid, &manifest.generator, seed, vid)?;
            match split {
                Split::Train => train.push(s),
                Split::Val => val.push(s),
            }
        }
        Ok(Self { manifest, train, val })
    }

    pub fn class_names(&self) -> Vec<String> {
        self.manifest.class_names()
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.classes.len()
    }

    /// Write manifest and sample files into `dir`, which must be empty or absent.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for split in [Split::Train, Split::Val] {
            fs::create_dir_all(dir.join("samples").join(split.as_str()))?;
        }
        let mut counters = vec![[0usize; 2]; self.num_classes()];
        for (split, samples) in [(Split::Train, &self.train), (Split::Val, &self.val)] {
            for s in samples {
                let slot = &mut counters[s.class_id][split as usize];
                write_sample_file(&sample_path(dir, split, s.class_id, *slot), s)?;
                *slot += 1;
            }
        }
        fs::write(dir.join(MANIFEST_FILE), self.manifest.to_json()?)?;
        Ok(())
    }

    /// Load a dataset directory; every sample must match its manifest entry.
    pub fn read(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(dir)?;
        let g = &manifest.generator;
        let shape = [g.frames, g.size, g.size, g.channels];
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (vid, cid, split, i) in manifest.sample_refs() {
            let path = sample_path(dir, split, cid, i);
            let s = read_sample_file(&path)?;
            if s.shape != shape || s.class_id != cid || s.video_id != vid || s.sample_seed != manifest.sample_seed(cid, split, i) {
                return Err(Error::Integrity(format!("{} does not match the manifest", path.display())));
            }
            match split {
                Split::Train => train.push(s),
                Split::Val => val.push(s),
            }
        }
        Ok(Self { manifest, train, val })
    }

    /// Train-split sample counts per class, the input to the frequency split.
    pub fn train_frequencies(&self) -> Vec<(usize, usize)> {
        self.manifest.counts.iter().enumerate().map(|(i, c)| (i, c.train)).collect()
    }

    /// Restrict to the named classes, re-indexing class ids in the given order.
    pub fn subset(&self, names: &[String]) -> Result<Dataset> {
        let ids: Vec<usize> = names
            .iter()
            .map(|n| {
                self.manifest
                    .class_id(n)
                    .ok_or_else(|| Error::data(format!("class `{n}` not in dataset {}", self.manifest.dataset_id)))
            })
            .collect::<Result<_>>()?;
        let remap = |samples: &[VideoSample]| -> Vec<VideoSample> {
            samples
                .iter()
                .filter_map(|s| {
                    ids.iter().position(|&c| c == s.class_id).map(|new| VideoSample {
                        class_id: new,
                        ..s.clone()
                    })
                })
                .collect()
        };
        let mut manifest = self.manifest.clone();
        manifest.classes = ids.iter().map(|&i| self.manifest.classes[i].clone()).collect();
        manifest.counts = ids.iter().map(|&i| self.manifest.counts[i]).collect();
        Ok(Dataset {
            manifest,
            train: remap(&self.train),
            val: remap(&self.val),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::videogen::default_roster;

    fn small_manifest() -> DatasetManifest {
        let g = GeneratorConfig {
            frames: 6,
            size: 12,
            ..Default::default()
        };
        DatasetManifest::uniform(default_roster()[..3].to_vec(), 2, 1, g, 17).unwrap()
    }

    #[test]
    fn regeneration_is_bit_exact() {
        let a = Dataset::generate(small_manifest()).unwrap();
        let b = Dataset::generate(small_manifest()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.train.len(), 6);
        assert_eq!(a.val.len(), 3);
        assert!(a.train.iter().chain(&a.val).all(|s| s.class_id < 3));
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::generate(small_manifest()).unwrap();
        ds.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(back.manifest, ds.manifest);
        assert_eq!(back.train, ds.train);
        assert_eq!(back.val, ds.val);
    }

    #[test]
    fn tampered_manifest_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::generate(small_manifest()).unwrap();
        ds.write(dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("\"global_seed\": 17", "\"global_seed\": 18");
        fs::write(&path, text).unwrap();
        assert!(matches!(Dataset::read(dir.path()), Err(Error::Integrity(_))));
    }

    #[test]
    fn truncated_sample_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::generate(small_manifest()).unwrap();
        ds.write(dir.path()).unwrap();
        let p = sample_path(dir.path(), Split::Val, 1, 0);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_sample_file(&p), Err(Error::Integrity(_))));
    }

    #[test]
    fn sample_header_is_a_json_line() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::generate(small_manifest()).unwrap();
        ds.write(dir.path()).unwrap();
        let bytes = fs::read(sample_path(dir.path(), Split::Train, 0, 1)).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        assert_eq!(header["shape"], serde_json::json!([6, 12, 12, 3]));
        assert_eq!(header["dtype"], "<f4");
        assert_eq!(bytes.len() - nl - 1, 6 * 12 * 12 * 3 * 4);
        let first = f32::from_le_bytes(bytes[nl + 1..nl + 5].try_into().unwrap());
        assert_eq!(first, ds.train[1].frames[0]);
    }

    #[test]
    fn subset_reindexes() {
        let ds = Dataset::generate(small_manifest()).unwrap();
        let names = vec![ds.manifest.classes[2].name.clone(), ds.manifest.classes[0].name.clone()];
        let sub = ds.subset(&names).unwrap();
        assert_eq!(sub.class_names(), names);
        assert_eq!(sub.train.len(), 4);
        assert!(sub.train.iter().all(|s| s.class_id < 2));
        assert!(ds.subset(&["nope".to_string()]).is_err());
    }

    #[test]
    fn empty_counts_are_rejected() {
        let g = GeneratorConfig::default();
        assert!(DatasetManifest::uniform(default_roster(), 0, 1, g.clone(), 0).is_err());
        assert!(matches!(DatasetManifest::uniform(vec![], 1, 1, g, 0), Err(Error::EmptyClassSet)));
    }
}
