//! Class partitions and shot sampling for the four evaluation settings.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::videogen::{derive_seed, DatasetManifest, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    ZeroShot,
    BaseToNovel,
    FewShot,
    FullySupervised,
}

impl Setting {
    pub const ALL: [Setting; 4] = [
        Setting::ZeroShot,
        Setting::BaseToNovel,
        Setting::FewShot,
        Setting::FullySupervised,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::ZeroShot => "zero_shot",
            Setting::BaseToNovel => "base_to_novel",
            Setting::FewShot => "few_shot",
            Setting::FullySupervised => "fully_supervised",
        }
    }

    /// Settings that average over three training splits.
    pub fn is_multi_split(self) -> bool {
        matches!(self, Setting::BaseToNovel | Setting::FewShot)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown setting `{s}`")))
    }
}

pub const ALLOWED_SHOTS: [usize; 4] = [2, 4, 8, 16];
pub const NUM_SPLITS: usize = 3;

/// Declarative description of one protocol split. Classes are referred to by name.
/// `train_video_ids` lists the selected training samples of the source dataset
/// (empty means every train sample of the training classes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub setting: Setting,
    pub source_dataset: String,
    pub source_classes: Vec<String>,
    #[serde(default)]
    pub target_dataset: Option<String>,
    #[serde(default)]
    pub target_classes: Vec<String>,
    #[serde(default)]
    pub base_classes: Vec<String>,
    #[serde(default)]
    pub novel_classes: Vec<String>,
    #[serde(default)]
    pub shots: Option<usize>,
    pub seed: u64,
    pub split_index: usize,
    #[serde(default)]
    pub train_video_ids: Vec<u64>,
}

fn disjoint(a: &[String], b: &[String]) -> bool {
    let a: BTreeSet<&String> = a.iter().collect();
    b.iter().all(|x| !a.contains(x))
}

fn unique(a: &[String]) -> bool {
    a.iter().collect::<BTreeSet<_>>().len() == a.len()
}

impl SplitSpec {
    /// Classes whose training samples this split uses.
    pub fn training_classes(&self) -> &[String] {
        match self.setting {
            Setting::BaseToNovel => &self.base_classes,
            _ => &self.source_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.source_classes.is_empty() {
            return Err(Error::EmptyClassSet);
        }
        if !unique(&self.source_classes) {
            return Err(Error::config("duplicate source classes"));
        }
        if self.split_index == 0 {
            return Err(Error::config("split_index starts at 1"));
        }
        if let Some(k) = self.shots {
            if !ALLOWED_SHOTS.contains(&k) {
                return Err(Error::config(format!("shots must be one of {ALLOWED_SHOTS:?}, got {k}")));
            }
        }
        match self.setting {
            Setting::ZeroShot => {
                if self.target_classes.is_empty() {
                    return Err(Error::config("zero_shot needs target classes"));
                }
                if !unique(&self.target_classes) {
                    return Err(Error::config("duplicate target classes"));
                }
                if !disjoint(&self.source_classes, &self.target_classes) {
                    return Err(Error::config("zero_shot source and target classes overlap"));
                }
            }
            Setting::BaseToNovel => {
                if self.base_classes.is_empty() || self.novel_classes.is_empty() {
                    return Err(Error::config("base_to_novel needs non-empty base and novel classes"));
                }
                if !disjoint(&self.base_classes, &self.novel_classes) {
                    return Err(Error::config("base and novel classes overlap"));
                }
                let union: BTreeSet<&String> = self.base_classes.iter().chain(&self.novel_classes).collect();
                let source: BTreeSet<&String> = self.source_classes.iter().collect();
                if union != source {
                    return Err(Error::config("base and novel classes must partition the source classes"));
                }
                if self.shots.is_none() {
                    return Err(Error::config("base_to_novel needs shots"));
                }
            }
            Setting::FewShot => {
                if self.shots.is_none() {
                    return Err(Error::config("few_shot needs shots"));
                }
            }
            Setting::FullySupervised => {}
        }
        Ok(())
    }
}

/// Frequency split: sort by count descending then class id ascending, the first
/// `ceil(n/2)` classes are base.
pub fn make_base_novel_split(freqs: &[(usize, usize)]) -> Result<(Vec<usize>, Vec<usize>)> {
    if freqs.is_empty() {
        return Err(Error::config("empty class frequency map"));
    }
    if freqs.len() < 2 {
        return Err(Error::config("base/novel split needs at least two classes"));
    }
    let mut sorted = freqs.to_vec();
    sorted.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::config("duplicate class id in frequency map"));
    }
    let n_base = sorted.len().div_ceil(2);
    let base = sorted[..n_base].iter().map(|x| x.0).collect();
    let novel = sorted[n_base..].iter().map(|x| x.0).collect();
    Ok((base, novel))
}

/// Window offsets into a class permutation for split indices `1..=split_index`.
/// Offsets step by `k` and skip any offset already taken, so distinct splits
/// select distinct windows whenever there are enough samples.
fn window_offset(n: usize, k: usize, split_index: usize) -> usize {
    let mut used: Vec<usize> = Vec::new();
    let mut off = 0;
    for s in 0..split_index {
        off = (s * k) % n;
        if used.len() < n {
            while used.contains(&off) {
                off = (off + 1) % n;
            }
        }
        used.push(off);
    }
    off
}

/// Pick exactly `k` training samples per class, returned as video ids in class order.
///
/// Each class's train samples are shuffled once per `seed`; split `s` takes a
/// cyclic window of length `k` at a split-specific offset.
pub fn sample_k_shot(manifest: &DatasetManifest, classes: &[usize], k: usize, seed: u64, split_index: usize) -> Result<Vec<u64>> {
    if k == 0 {
        return Err(Error::config("k must be positive"));
    }
    if split_index == 0 {
        return Err(Error::config("split_index starts at 1"));
    }
    let refs = manifest.sample_refs();
    let mut out = Vec::with_capacity(classes.len() * k);
    for &cid in classes {
        let mut ids: Vec<u64> = refs
            .iter()
            .filter(|r| r.1 == cid && r.2 == Split::Train)
            .map(|r| r.0)
            .collect();
        let n = ids.len();
        if n < k {
            return Err(Error::data(format!(
                "class {} has {n} train samples, {k} requested",
                manifest.classes.get(cid).map_or("?", |c| c.name.as_str())
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, cid as u64, 0x6b73]));
        ids.shuffle(&mut rng);
        let off = window_offset(n, k, split_index);
        let mut pick: Vec<u64> = (0..k).map(|i| ids[(off + i) % n]).collect();
        pick.sort_unstable();
        out.extend(pick);
    }
    Ok(out)
}

/// Build the split specs for a setting over a dataset.
///
/// `target` names the held-out classes for zero-shot (taken from `target_manifest`
/// when given, otherwise from the source dataset).
pub fn make_splits(
    manifest: &DatasetManifest,
    setting: Setting,
    shots: Option<usize>,
    seed: u64,
    target: Option<(&DatasetManifest, &[String])>,
) -> Result<Vec<SplitSpec>> {
    let all = manifest.class_names();
    let base_spec = |split_index: usize| SplitSpec {
        setting,
        source_dataset: manifest.dataset_id.clone(),
        source_classes: all.clone(),
        target_dataset: None,
        target_classes: vec![],
        base_classes: vec![],
        novel_classes: vec![],
        shots,
        seed,
        split_index,
        train_video_ids: vec![],
    };
    let specs = match setting {
        Setting::ZeroShot => {
            let (tm, tclasses) = target.ok_or_else(|| Error::config("zero_shot needs target classes"))?;
            for c in tclasses {
                if tm.class_id(c).is_none() {
                    return Err(Error::config(format!("target class `{c}` not in dataset {}", tm.dataset_id)));
                }
            }
            let same = tm.dataset_id == manifest.dataset_id;
            let mut s = base_spec(1);
            s.shots = None;
            if same {
                s.source_classes.retain(|c| !tclasses.contains(c));
            }
            s.target_dataset = Some(tm.dataset_id.clone());
            s.target_classes = tclasses.to_vec();
            vec![s]
        }
        Setting::BaseToNovel => {
            let k = shots.ok_or_else(|| Error::config("base_to_novel needs --k"))?;
            let (base, novel) = make_base_novel_split(&manifest_frequencies(manifest))?;
            (1..=NUM_SPLITS)
                .map(|i| {
                    let mut s = base_spec(i);
                    s.base_classes = base.iter().map(|&c| all[c].clone()).collect();
                    s.novel_classes = novel.iter().map(|&c| all[c].clone()).collect();
                    s.train_video_ids = sample_k_shot(manifest, &base, k, seed, i)?;
                    Ok(s)
                })
                .collect::<Result<Vec<_>>>()?
        }
        Setting::FewShot => {
            let k = shots.ok_or_else(|| Error::config("few_shot needs --k"))?;
            let ids: Vec<usize> = (0..all.len()).collect();
            (1..=NUM_SPLITS)
                .map(|i| {
                    let mut s = base_spec(i);
                    s.train_video_ids = sample_k_shot(manifest, &ids, k, seed, i)?;
                    Ok(s)
                })
                .collect::<Result<Vec<_>>>()?
        }
        Setting::FullySupervised => {
            let mut s = base_spec(1);
            s.shots = None;
            vec![s]
        }
    };
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}

pub fn manifest_frequencies(manifest: &DatasetManifest) -> Vec<(usize, usize)> {
    manifest.counts.iter().enumerate().map(|(i, c)| (i, c.train)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::videogen::{default_roster, ClassCounts, GeneratorConfig};
    use proptest::prelude::*;

    fn manifest(counts: &[usize]) -> DatasetManifest {
        let roster = default_roster();
        let classes = roster[..counts.len()].to_vec();
        let counts = counts.iter().map(|&c| ClassCounts { train: c, val: 1 }).collect();
        DatasetManifest::new(classes, counts, GeneratorConfig::default(), 5).unwrap()
    }

    #[test]
    fn frequency_split_examples() {
        // a=0, b=1, c=2, d=3
        let (b, n) = make_base_novel_split(&[(0, 10), (1, 5), (2, 1), (3, 7)]).unwrap();
        assert_eq!((b, n), (vec![0, 3], vec![1, 2]));
        let (b, n) = make_base_novel_split(&[(3, 4), (1, 4), (0, 4), (2, 4)]).unwrap();
        assert_eq!((b, n), (vec![0, 1], vec![2, 3]));
        let five: Vec<(usize, usize)> = (0..5).map(|i| (i, 3)).collect();
        let (b, n) = make_base_novel_split(&five).unwrap();
        assert_eq!((b.len(), n.len()), (3, 2));
        assert!(matches!(make_base_novel_split(&[]), Err(Error::Config(_))));
    }

    #[test]
    fn roster_split_sizes() {
        let m = manifest(&[4; 19]);
        let specs = make_splits(&m, Setting::BaseToNovel, Some(2), 0, None).unwrap();
        assert_eq!(specs.len(), 3);
        assert_eq!(specs[0].base_classes.len(), 10);
        assert_eq!(specs[0].novel_classes.len(), 9);
    }

    #[test]
    fn k_shot_full_set_and_errors() {
        let m = manifest(&[2, 2, 2]);
        let all = sample_k_shot(&m, &[0, 1, 2], 2, 9, 1).unwrap();
        let expected: Vec<u64> = m.sample_refs().iter().filter(|r| r.2 == Split::Train).map(|r| r.0).collect();
        assert_eq!(all, expected);
        assert!(matches!(sample_k_shot(&m, &[0], 4, 9, 1), Err(Error::Data(_))));
    }

    #[test]
    fn splits_differ_and_cover_more_than_k() {
        let m = manifest(&[6, 3, 5]);
        let s: Vec<Vec<u64>> = (1..=3).map(|i| sample_k_shot(&m, &[0, 1, 2], 2, 4, i).unwrap()).collect();
        assert_ne!(s[0], s[1]);
        assert_ne!(s[1], s[2]);
        assert_ne!(s[0], s[2]);
    }

    #[test]
    fn zero_shot_overlap_is_rejected() {
        let mut spec = SplitSpec {
            setting: Setting::ZeroShot,
            source_dataset: "a".into(),
            source_classes: vec!["x".into(), "y".into()],
            target_dataset: Some("a".into()),
            target_classes: vec!["y".into()],
            base_classes: vec![],
            novel_classes: vec![],
            shots: None,
            seed: 0,
            split_index: 1,
            train_video_ids: vec![],
        };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        spec.target_classes = vec!["z".into()];
        spec.validate().unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn frequency_split_invariants(counts in proptest::collection::vec(0usize..20, 2..30)) {
            let freqs: Vec<(usize, usize)> = counts.iter().copied().enumerate().collect();
            let (b, n) = make_base_novel_split(&freqs).unwrap();
            prop_assert_eq!(b.len(), counts.len().div_ceil(2));
            prop_assert_eq!(b.len() + n.len(), counts.len());
            let mut all: Vec<usize> = b.iter().chain(&n).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..counts.len()).collect::<Vec<_>>());
            let min_base = b.iter().map(|&c| counts[c]).min().unwrap();
            prop_assert!(n.iter().all(|&c| counts[c] <= min_base));
        }

        #[test]
        fn k_shot_is_exact_and_deterministic(
            counts in proptest::collection::vec(2usize..9, 1..5),
            k in 1usize..3,
            seed in any::<u64>(),
            split in 1usize..4,
        ) {
            let m = manifest(&counts);
            let ids: Vec<usize> = (0..counts.len()).collect();
            let a = sample_k_shot(&m, &ids, k, seed, split).unwrap();
            let b = sample_k_shot(&m, &ids, k, seed, split).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.len(), k * counts.len());
            let refs = m.sample_refs();
            for cid in 0..counts.len() {
                let picked: BTreeSet<u64> = a.iter().copied().filter(|v| refs[*v as usize].1 == cid).collect();
                prop_assert_eq!(picked.len(), k);
                prop_assert!(picked.iter().all(|v| refs[*v as usize].2 == Split::Train));
            }
        }
    }
}
