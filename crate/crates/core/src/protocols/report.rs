//! Evaluation records, one JSON object per line in a results file.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{harmonic_mean, EvalOptions, Setting};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitMetrics {
    pub split_index: usize,
    pub n_videos: usize,
    pub top1: f64,
    pub top5: f64,
    pub base_acc: Option<f64>,
    pub novel_acc: Option<f64>,
    pub hm: Option<f64>,
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

/// Mean and sample standard deviation (zero for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub setting: Setting,
    pub method: String,
    pub config_hash: String,
    pub seed: u64,
    /// Shots per class for few-shot runs.
    #[serde(default)]
    pub shots: Option<usize>,
    pub eval: EvalOptions,
    pub splits: Vec<SplitMetrics>,
    pub aggregate: BTreeMap<String, Stat>,
}

impl EvalReport {
    pub fn new(
        setting: Setting,
        method: String,
        config_hash: String,
        seed: u64,
        eval: EvalOptions,
        splits: Vec<SplitMetrics>,
    ) -> Self {
        let mut aggregate = BTreeMap::new();
        let fields: [(&str, fn(&SplitMetrics) -> Option<f64>); 9] = [
            ("top1", |s| Some(s.top1)),
            ("top5", |s| Some(s.top5)),
            ("base_acc", |s| s.base_acc),
            ("novel_acc", |s| s.novel_acc),
            ("hm", |s| s.hm),
            ("homogeneity", |s| Some(s.homogeneity)),
            ("completeness", |s| Some(s.completeness)),
            ("v_measure", |s| Some(s.v_measure)),
            ("n_videos", |s| Some(s.n_videos as f64)),
        ];
        for (name, get) in fields {
            let values: Vec<f64> = splits.iter().filter_map(get).collect();
            if let Some(stat) = Stat::of(&values) {
                aggregate.insert(name.to_string(), stat);
            }
        }
        Self {
            setting,
            method,
            config_hash,
            seed,
            shots: None,
            eval,
            splits,
            aggregate,
        }
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.aggregate.get(metric).map(|s| s.mean)
    }

    /// Range and consistency checks on every metric.
    pub fn validate(&self) -> Result<()> {
        for s in &self.splits {
            let pct = [Some(s.top1), Some(s.top5), s.base_acc, s.novel_acc, s.hm];
            if pct.iter().flatten().any(|v| !(0.0..=100.0).contains(v)) {
                return Err(Error::data(format!("split {}: accuracy outside [0, 100]", s.split_index)));
            }
            if [s.homogeneity, s.completeness, s.v_measure]
                .iter()
                .any(|v| !(-1e-12..=1.0 + 1e-12).contains(v))
            {
                return Err(Error::data(format!("split {}: cluster metric outside [0, 1]", s.split_index)));
            }
            if let (Some(b), Some(n), Some(h)) = (s.base_acc, s.novel_acc, s.hm) {
                if (harmonic_mean(b, n) - h).abs() > 0.05 {
                    return Err(Error::data(format!("split {}: hm inconsistent with base/novel", s.split_index)));
                }
            }
        }
        Ok(())
    }

    /// Append as one JSON line.
    pub fn append_to(&self, path: &Path) -> Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        let mut line = serde_json::to_vec(self)?;
        line.push(b'\n');
        f.write_all(&line)?;
        Ok(())
    }

    pub fn read_all(path: &Path) -> Result<Vec<Self>> {
        let f = std::fs::File::open(path)?;
        let mut out = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }
}
