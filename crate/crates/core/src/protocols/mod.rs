//! Zero-shot, base-to-novel, few-shot and fully-supervised protocols, and the
//! metrics they report.

mod metrics;
mod report;
mod splits;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

pub use metrics::{argmax, cluster_quality, harmonic_mean, top_k_accuracy, ClusterScores};
pub use report::{EvalReport, SplitMetrics, Stat};
pub use splits::{
    make_base_novel_split, make_splits, manifest_frequencies, sample_k_shot, Setting, SplitSpec, ALLOWED_SHOTS,
    NUM_SPLITS,
};

use crate::encoders::DualEncoder;
use crate::error::{Error, Result};
use crate::fusion::{fuse_and_score, multi_view_logits, pool_frames, scale_from_logit, FusionMode};
use crate::trainer::{train, TrainConfig, TrainData};
use crate::videogen::{make_views, stack_clips, Dataset, VideoSample, ViewSet};

/// How videos are turned into logits at evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    pub views: ViewSet,
    pub fusion: FusionMode,
    pub batch_size: usize,
}

impl EvalOptions {
    /// Eight frames, one view; four frames with two crops by two clips for the
    /// fully-supervised setting.
    pub fn for_setting(setting: Setting, crop_size: usize) -> Self {
        let views = match setting {
            Setting::FullySupervised => ViewSet {
                spatial_crops: 2,
                temporal_clips: 2,
                crop_size,
                frames_per_clip: 4,
            },
            _ => ViewSet::single(crop_size, 8),
        };
        Self {
            views,
            fusion: FusionMode::Embedding,
            batch_size: 16,
        }
    }
}

/// Frame embeddings of a set of videos, one `[N, T, D]` tensor per view.
#[derive(Debug, Clone)]
pub struct EncodedVideos {
    pub video_ids: Vec<u64>,
    pub views: Vec<Tensor>,
}

pub fn encode_videos(model: &DualEncoder, samples: &[&VideoSample], opts: &EvalOptions) -> Result<EncodedVideos> {
    if samples.is_empty() {
        return Err(Error::data("no videos to evaluate"));
    }
    let n_views = opts.views.num_views();
    let mut per_view: Vec<Vec<Tensor>> = vec![Vec::new(); n_views];
    for chunk in samples.chunks(opts.batch_size.max(1)) {
        let clips = chunk
            .iter()
            .map(|s| make_views(s, &opts.views))
            .collect::<Result<Vec<_>>>()?;
        for (v, out) in per_view.iter_mut().enumerate() {
            let batch: Vec<_> = clips.iter().map(|c| c[v].clone()).collect();
            let x = stack_clips(&batch)?.to_dtype(model.params.dtype())?;
            out.push(model.encode_clips(&x)?.detach());
        }
    }
    Ok(EncodedVideos {
        video_ids: samples.iter().map(|s| s.video_id).collect(),
        views: per_view
            .iter()
            .map(|chunks| Ok(Tensor::cat(chunks, 0)?))
            .collect::<Result<_>>()?,
    })
}

fn rows_f64(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    Ok(t.to_dtype(DType::F64)?.to_vec2::<f64>()?)
}

fn rows_f32(t: &Tensor) -> Result<Vec<Vec<f32>>> {
    Ok(t.to_dtype(DType::F32)?.to_vec2::<f32>()?)
}

impl EncodedVideos {
    /// Video-level logits against `texts: [K, D]`, averaged over views.
    pub fn logits(&self, texts: &Tensor, scale: &Tensor, fusion: FusionMode) -> Result<Vec<Vec<f64>>> {
        let per_view = self
            .views
            .iter()
            .map(|frames| fuse_and_score(frames, texts, scale, fusion)?.video_logits())
            .collect::<Result<Vec<_>>>()?;
        rows_f64(&multi_view_logits(&per_view)?)
    }

    /// The given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let idx = Tensor::from_vec(rows.iter().map(|&r| r as u32).collect::<Vec<_>>(), rows.len(), self.views[0].device())?;
        Ok(Self {
            video_ids: rows.iter().map(|&r| self.video_ids[r]).collect(),
            views: self.views.iter().map(|v| Ok(v.index_select(&idx, 0)?)).collect::<Result<_>>()?,
        })
    }

    /// Temporally pooled embeddings averaged over views, `N x D`.
    pub fn pooled(&self) -> Result<Vec<Vec<f32>>> {
        let pooled = self.views.iter().map(pool_frames).collect::<Result<Vec<_>>>()?;
        rows_f32(&Tensor::stack(&pooled, 0)?.mean(0)?)
    }
}

/// Class whose text embedding has the highest cosine similarity with `video`,
/// ties to the lower index. Computed in `f64` from the stored `f32` values so it
/// can be reproduced from an embedding dump.
pub fn nearest_class(video: &[f32], texts: &[Vec<f32>]) -> usize {
    let norm = |v: &[f32]| v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    let nv = norm(video);
    let sims: Vec<f64> = texts
        .iter()
        .map(|t| {
            let dot: f64 = video.iter().zip(t).map(|(&a, &b)| a as f64 * b as f64).sum();
            dot / (nv * norm(t)).max(f64::MIN_POSITIVE)
        })
        .collect();
    argmax(&sims)
}

/// Evaluation of a labelled video set against one label space.
#[derive(Debug, Clone)]
pub struct ClassEval {
    pub class_names: Vec<String>,
    pub video_ids: Vec<u64>,
    pub labels: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
    pub video_embeddings: Vec<Vec<f32>>,
    pub text_embeddings: Vec<Vec<f32>>,
}

impl ClassEval {
    pub fn top_k(&self, k: usize) -> Result<f64> {
        top_k_accuracy(&self.logits, &self.labels, k.min(self.class_names.len()))
    }

    /// Nearest-text-class assignment of each pooled video embedding.
    pub fn cluster_predictions(&self) -> Vec<usize> {
        self.video_embeddings
            .iter()
            .map(|v| nearest_class(v, &self.text_embeddings))
            .collect()
    }

    pub fn cluster_scores(&self) -> Result<ClusterScores> {
        cluster_quality(&self.cluster_predictions(), &self.labels)
    }
}

/// Videos of `samples` whose class is in `classes`, with labels by position in `classes`.
fn select<'a>(
    samples: &[&'a VideoSample],
    sample_class_names: &[String],
    classes: &[String],
) -> Result<(Vec<&'a VideoSample>, Vec<usize>)> {
    let mut picked = Vec::new();
    let mut labels = Vec::new();
    for s in samples {
        let name = sample_class_names
            .get(s.class_id)
            .ok_or_else(|| Error::data(format!("class id {} out of range", s.class_id)))?;
        if let Some(l) = classes.iter().position(|c| c == name) {
            picked.push(*s);
            labels.push(l);
        }
    }
    Ok((picked, labels))
}

/// Score already encoded videos against the texts of `classes`.
pub fn score_encoded(
    model: &DualEncoder,
    encoded: &EncodedVideos,
    labels: Vec<usize>,
    classes: &[String],
    fusion: FusionMode,
) -> Result<ClassEval> {
    let texts = model.encode_class_names(classes)?.detach();
    let scale = scale_from_logit(&model.logit_scale()?)?;
    Ok(ClassEval {
        class_names: classes.to_vec(),
        video_ids: encoded.video_ids.clone(),
        labels,
        logits: encoded.logits(&texts, &scale, fusion)?,
        video_embeddings: encoded.pooled()?,
        text_embeddings: rows_f32(&texts)?,
    })
}

/// Score the videos of `samples` whose class (named through
/// `sample_class_names`) is in `classes`, labelled by position in `classes`.
pub fn evaluate_classes(
    model: &DualEncoder,
    samples: &[&VideoSample],
    sample_class_names: &[String],
    classes: &[String],
    opts: &EvalOptions,
) -> Result<ClassEval> {
    model.check_vocab(classes)?;
    let (picked, labels) = select(samples, sample_class_names, classes)?;
    let encoded = encode_videos(model, &picked, opts)?;
    score_encoded(model, &encoded, labels, classes, opts.fusion)
}

/// Validation-split evaluation of `ds` restricted to `classes`.
pub fn evaluate_dataset(model: &DualEncoder, ds: &Dataset, classes: &[String], opts: &EvalOptions) -> Result<ClassEval> {
    let samples: Vec<&VideoSample> = ds.val.iter().collect();
    evaluate_classes(model, &samples, &ds.class_names(), classes, opts)
}

/// Inputs of one protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolRun<'a> {
    pub specs: &'a [SplitSpec],
    pub source: &'a Dataset,
    /// Zero-shot target; defaults to the source dataset.
    pub target: Option<&'a Dataset>,
    /// When set, every split trains a copy of the model first.
    pub train: Option<&'a TrainConfig>,
    pub eval: EvalOptions,
    pub method: String,
    pub config_hash: String,
    pub seed: u64,
}

fn check_dataset(expected: &str, ds: &Dataset) -> Result<()> {
    if expected != ds.manifest.dataset_id {
        return Err(Error::config(format!(
            "split refers to dataset {expected}, got {}",
            ds.manifest.dataset_id
        )));
    }
    Ok(())
}

/// Train (optionally) and evaluate every split, then aggregate.
pub fn run_protocol(run: &ProtocolRun<'_>, model: &DualEncoder) -> Result<EvalReport> {
    let first = run.specs.first().ok_or_else(|| Error::config("no splits to run"))?;
    let setting = first.setting;
    let target = run.target.unwrap_or(run.source);
    for spec in run.specs {
        spec.validate()?;
        if spec.setting != setting {
            return Err(Error::config("all splits of a run must share one setting"));
        }
        check_dataset(&spec.source_dataset, run.source)?;
        if let Some(t) = &spec.target_dataset {
            check_dataset(t, target)?;
        }
        model.check_vocab(&spec.source_classes)?;
        model.check_vocab(&spec.target_classes)?;
    }
    let mut splits = Vec::with_capacity(run.specs.len());
    for spec in run.specs {
        let trained;
        let m = match run.train {
            Some(cfg) => {
                let ids = (!spec.train_video_ids.is_empty()).then_some(spec.train_video_ids.as_slice());
                let data = TrainData::from_dataset(run.source, spec.training_classes(), ids)?;
                let mut copy = model.try_clone()?;
                train(cfg, &mut copy, &data)?;
                trained = copy;
                &trained
            }
            None => model,
        };
        splits.push(evaluate_split(m, spec, run.source, target, &run.eval)?);
    }
    let mut report = EvalReport::new(
        setting,
        run.method.clone(),
        run.config_hash.clone(),
        run.seed,
        run.eval.clone(),
        splits,
    );
    report.shots = first.shots;
    Ok(report)
}

fn evaluate_split(
    model: &DualEncoder,
    spec: &SplitSpec,
    source: &Dataset,
    target: &Dataset,
    opts: &EvalOptions,
) -> Result<SplitMetrics> {
    let (main, base_novel) = match spec.setting {
        Setting::ZeroShot => (evaluate_dataset(model, target, &spec.target_classes, opts)?, None),
        Setting::BaseToNovel => {
            let samples: Vec<&VideoSample> = source.val.iter().collect();
            let names = source.class_names();
            let (picked, labels) = select(&samples, &names, &spec.source_classes)?;
            let encoded = encode_videos(model, &picked, opts)?;
            let part = |classes: &[String]| -> Result<f64> {
                let (rows, sub_labels): (Vec<usize>, Vec<usize>) = labels
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &l)| classes.iter().position(|c| *c == spec.source_classes[l]).map(|p| (i, p)))
                    .unzip();
                score_encoded(model, &encoded.select(&rows)?, sub_labels, classes, opts.fusion)?.top_k(1)
            };
            let base = part(&spec.base_classes)?;
            let novel = part(&spec.novel_classes)?;
            let all = score_encoded(model, &encoded, labels.clone(), &spec.source_classes, opts.fusion)?;
            (all, Some((base, novel)))
        }
        Setting::FewShot | Setting::FullySupervised => (evaluate_dataset(model, source, &spec.source_classes, opts)?, None),
    };
    let cluster = main.cluster_scores()?;
    Ok(SplitMetrics {
        split_index: spec.split_index,
        n_videos: main.labels.len(),
        top1: main.top_k(1)?,
        top5: main.top_k(5)?,
        base_acc: base_novel.map(|b| b.0),
        novel_acc: base_novel.map(|b| b.1),
        hm: base_novel.map(|(b, n)| harmonic_mean(b, n)),
        homogeneity: cluster.homogeneity,
        completeness: cluster.completeness,
        v_measure: cluster.v_measure,
    })
}

#[cfg(test)]
mod tests;
