use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};
use vclip_core::encoders::{build_tokenizer, DEFAULT_TEMPLATE};
use vclip_core::protocols::{evaluate_dataset, make_splits as build_splits, run_protocol, ProtocolRun};
use vclip_core::trainer::{prompt_stage, train as run_training, Provenance, StageRecord};
use vclip_core::{
    content_hash, Checkpoint, Dataset, DatasetManifest, DualEncoder, DumpHeader, EmbeddingDump, Error, EvalReport,
    Regime, Result, RunConfigFile, Setting, SplitSpec, TrainData,
};

use crate::plot;
use crate::{EvalArgs, ExportArgs, GenDataArgs, MakeSplitsArgs, ReportArgs, TrainArgs};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const LOSS_FILE: &str = "loss_curve.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.vclip";

/// Per-step training loss written next to every checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossCurveFile {
    pub method: String,
    pub config_hash: String,
    pub seed: u64,
    pub epochs: usize,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub loss_curve: Vec<f64>,
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

fn load_config(path: &Path) -> Result<RunConfigFile> {
    RunConfigFile::from_path(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
        other => other,
    })
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn is_non_empty_dir(path: &Path) -> Result<bool> {
    Ok(path.is_dir() && fs::read_dir(path)?.next().is_some())
}

/// Class names of the configured roster and of `ds`, in first-seen order.
fn vocabulary_names(cfg: &RunConfigFile, ds: &Dataset) -> Vec<String> {
    let mut seen = BTreeSet::new();
    cfg.data
        .classes()
        .into_iter()
        .map(|c| c.name)
        .chain(ds.class_names())
        .filter(|n| seen.insert(n.clone()))
        .collect()
}

pub fn gen_data(args: &GenDataArgs, root: &Path) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => RunConfigFile::default(),
    };
    let manifest = cfg.data.manifest()?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| root.join("datasets").join(&manifest.dataset_id));
    if is_non_empty_dir(&out)? {
        if !args.force {
            return Err(Error::Config(format!(
                "{} is not empty; pass --force to overwrite",
                out.display()
            )));
        }
        fs::remove_dir_all(&out)?;
    }
    let ds = Dataset::generate(manifest)?;
    ds.write(&out)?;
    println!(
        "dataset {} ({} classes, {} train / {} val videos) -> {}",
        ds.manifest.dataset_id,
        ds.num_classes(),
        ds.train.len(),
        ds.val.len(),
        out.display()
    );
    Ok(())
}

fn split_file_name(spec: &SplitSpec) -> String {
    let k = spec.shots.map(|k| format!("-k{k}")).unwrap_or_default();
    format!("{}{k}-seed{}-split{}.json", spec.setting, spec.seed, spec.split_index)
}

pub fn make_splits(args: &MakeSplitsArgs, root: &Path) -> Result<()> {
    let manifest = DatasetManifest::read(&args.dataset)?;
    let setting: Setting = args.setting.parse()?;
    let target_manifest = match &args.target {
        Some(dir) => Some(DatasetManifest::read(dir)?),
        None => None,
    };
    let target_classes = match (&target_manifest, args.target_classes.is_empty()) {
        (_, false) => args.target_classes.clone(),
        (Some(t), true) => t.class_names(),
        (None, true) => vec![],
    };
    let target = match setting {
        Setting::ZeroShot => Some((target_manifest.as_ref().unwrap_or(&manifest), target_classes.as_slice())),
        _ => None,
    };
    let specs = build_splits(&manifest, setting, args.k, args.seed, target)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| root.join("splits").join(&manifest.dataset_id));
    fs::create_dir_all(&out)?;
    println!(
        "{:<28} {:>7} {:>7} {:>5} {:>6} {:>7}",
        "file", "source", "target", "base", "novel", "videos"
    );
    for spec in &specs {
        let name = split_file_name(spec);
        fs::write(out.join(&name), serde_json::to_string_pretty(spec)? + "\n")?;
        let videos = if spec.train_video_ids.is_empty() {
            "all".to_string()
        } else {
            spec.train_video_ids.len().to_string()
        };
        println!(
            "{:<28} {:>7} {:>7} {:>5} {:>6} {:>7}",
            name,
            spec.source_classes.len(),
            spec.target_classes.len(),
            spec.base_classes.len(),
            spec.novel_classes.len(),
            videos
        );
    }
    println!("{} split file(s) -> {}", specs.len(), out.display());
    Ok(())
}

fn check_split_dataset(spec: &SplitSpec, ds: &Dataset) -> Result<()> {
    if spec.source_dataset != ds.manifest.dataset_id {
        return Err(Error::Config(format!(
            "split was made for dataset {}, got {}",
            spec.source_dataset, ds.manifest.dataset_id
        )));
    }
    Ok(())
}

pub fn train(args: &TrainArgs, root: &Path) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let config_hash = cfg.hash()?;
    let ds = Dataset::read(&args.dataset)?;
    let spec: Option<SplitSpec> = match &args.split {
        Some(p) => Some(read_json(p)?),
        None => None,
    };
    let all = ds.class_names();
    let (classes, ids) = match &spec {
        Some(s) => {
            s.validate()?;
            check_split_dataset(s, &ds)?;
            let ids = (!s.train_video_ids.is_empty()).then_some(s.train_video_ids.as_slice());
            (s.training_classes(), ids)
        }
        None => (all.as_slice(), None),
    };
    let data = TrainData::from_dataset(&ds, classes, ids)?;
    let tc = &cfg.train;

    let (checkpoint, outcome) = if tc.regime == Regime::PromptOnly {
        if args.init.is_some() {
            return Err(Error::Config(
                "prompt_only starts from train.stage1_checkpoint; drop --init".into(),
            ));
        }
        tc.validate()?;
        let path = tc
            .stage1_checkpoint
            .as_ref()
            .ok_or_else(|| Error::Config("train.stage1_checkpoint is required for prompt_only".into()))?;
        let stage1 = load_checkpoint(Path::new(path))?;
        prompt_stage(&stage1, tc, &data, &cfg.prompts)?
    } else {
        let (mut model, mut provenance) = match &args.init {
            Some(p) => {
                let c = load_checkpoint(p)?;
                (c.model, c.provenance)
            }
            None => {
                let vocab = build_tokenizer(&vocabulary_names(&cfg, &ds), DEFAULT_TEMPLATE, cfg.model.text.max_tokens)?;
                let model = DualEncoder::new(cfg.model.clone(), vocab, DType::F32)?;
                (
                    model,
                    Provenance {
                        config_hash: String::new(),
                        stages: vec![],
                    },
                )
            }
        };
        let outcome = run_training(tc, &mut model, &data)?;
        provenance.stages.push(StageRecord {
            regime: tc.regime,
            epochs: outcome.epochs,
            steps: outcome.steps,
            final_loss: outcome.final_loss,
            config_hash: config_hash.clone(),
            dataset: Some(ds.manifest.dataset_id.clone()),
        });
        provenance.config_hash = content_hash(&provenance.stages)?;
        (Checkpoint::new(model, provenance), outcome)
    };

    let out = args.out.clone().unwrap_or_else(|| {
        root.join("runs")
            .join(format!("{}-{}-seed{}", tc.regime, short(&config_hash), tc.seed))
    });
    fs::create_dir_all(&out)?;
    checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    let curve = LossCurveFile {
        method: tc.regime.to_string(),
        config_hash: config_hash.clone(),
        seed: tc.seed,
        epochs: outcome.epochs,
        steps: outcome.steps,
        final_loss: outcome.final_loss,
        loss_curve: outcome.loss_curve,
    };
    fs::write(out.join(LOSS_FILE), serde_json::to_string_pretty(&curve)? + "\n")?;
    fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
    let final_loss = curve.final_loss.map_or("-".to_string(), |l| format!("{l:.4}"));
    println!(
        "{} on {} videos: {} steps, final loss {final_loss}, config {} -> {}",
        tc.regime,
        data.len(),
        curve.steps,
        short(&config_hash),
        out.display()
    );
    Ok(())
}

fn default_method(ckpt: &Checkpoint) -> String {
    ckpt.provenance
        .stages
        .last()
        .map_or_else(|| Regime::Frozen.to_string(), |s| s.regime.to_string())
}

pub fn eval(args: &EvalArgs, root: &Path) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let ds = Dataset::read(&args.dataset)?;
    let target = match &args.target {
        Some(dir) => Some(Dataset::read(dir)?),
        None => None,
    };
    let p = &cfg.protocol;
    let specs: Vec<SplitSpec> = if args.splits.is_empty() {
        let target_classes = match (&target, p.target_classes.is_empty()) {
            (Some(t), true) => t.class_names(),
            _ => p.target_classes.clone(),
        };
        let tm = target.as_ref().map_or(&ds.manifest, |t| &t.manifest);
        let t = (p.setting == Setting::ZeroShot).then_some((tm, target_classes.as_slice()));
        build_splits(&ds.manifest, p.setting, p.shots, p.seed, t)?
    } else {
        args.splits.iter().map(|f| read_json(f)).collect::<Result<_>>()?
    };
    let crop = ckpt.model.config.vision.image_size;
    let run = ProtocolRun {
        specs: &specs,
        source: &ds,
        target: target.as_ref(),
        train: None,
        eval: p.eval_options(crop),
        method: args.method.clone().unwrap_or_else(|| default_method(&ckpt)),
        config_hash: cfg.hash()?,
        seed: p.seed,
    };
    let report = run_protocol(&run, &ckpt.model)?;
    report.validate()?;
    let out = args.out.clone().unwrap_or_else(|| root.join("results"));
    fs::create_dir_all(&out)?;
    let file = out.join(RESULTS_FILE);
    report.append_to(&file)?;
    print!("{}", render_table(std::slice::from_ref(&report)));
    println!("appended to {}", file.display());
    Ok(())
}

pub fn export_embeddings(args: &ExportArgs, root: &Path) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let ds = Dataset::read(&args.dataset)?;
    let classes = if args.classes.is_empty() {
        ds.class_names()
    } else {
        args.classes.clone()
    };
    let opts = cfg.protocol.eval_options(ckpt.model.config.vision.image_size);
    let ev = evaluate_dataset(&ckpt.model, &ds, &classes, &opts)?;
    let checkpoint_hash = ckpt.digest()?;
    let config_hash = cfg.hash()?;
    let dump = EmbeddingDump {
        header: DumpHeader {
            count: ev.video_embeddings.len(),
            dim: ckpt.model.config.embed_dim,
            class_names: classes,
            checkpoint_hash: checkpoint_hash.clone(),
            config_hash,
            seed: cfg.protocol.seed,
            text_rows: ev.text_embeddings.len(),
        },
        video_ids: ev.video_ids.clone(),
        class_ids: ev.labels.iter().map(|&l| l as u32).collect(),
        embeddings: ev.video_embeddings.clone(),
        text_embeddings: ev.text_embeddings.clone(),
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| root.join("embeddings").join(format!("{}.emb", short(&checkpoint_hash))));
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    dump.save(&out)?;
    let c = ev.cluster_scores()?;
    println!(
        "{} embeddings (D={}) -> {}; homogeneity {:.6} completeness {:.6} v_measure {:.6}",
        dump.header.count,
        dump.header.dim,
        out.display(),
        c.homogeneity,
        c.completeness,
        c.v_measure
    );
    Ok(())
}

fn collect_files(dir: &Path, name: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect_files(&path, name, out)?;
        } else if path.file_name().is_some_and(|n| n == name) {
            out.push(path);
        }
    }
    Ok(())
}

fn cell(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.1}"))
}

/// Rows sorted by harmonic mean (descending), then top-1, then method name.
pub fn sort_reports(reports: &mut [EvalReport]) {
    let key = |v: Option<f64>| v.unwrap_or(f64::NEG_INFINITY);
    reports.sort_by(|a, b| {
        key(b.mean("hm"))
            .total_cmp(&key(a.mean("hm")))
            .then(key(b.mean("top1")).total_cmp(&key(a.mean("top1"))))
            .then(a.method.cmp(&b.method))
    });
}

pub fn render_table(reports: &[EvalReport]) -> String {
    let mut s = format!(
        "{:<14} {:<17} {:>3} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>7} {:>13}\n",
        "method", "setting", "K", "base", "novel", "HM", "top1", "top5", "V", "splits", "config"
    );
    for r in reports {
        s.push_str(&format!(
            "{:<14} {:<17} {:>3} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>7} {:>13}\n",
            r.method,
            r.setting.as_str(),
            r.shots.map_or("-".to_string(), |k| k.to_string()),
            cell(r.mean("base_acc")),
            cell(r.mean("novel_acc")),
            cell(r.mean("hm")),
            cell(r.mean("top1")),
            cell(r.mean("top5")),
            r.mean("v_measure").map_or("-".to_string(), |v| format!("{v:.3}")),
            r.splits.len(),
            short(&r.config_hash),
        ));
    }
    s
}

pub fn report(args: &ReportArgs, root: &Path) -> Result<()> {
    let mut result_files = Vec::new();
    collect_files(&args.results, RESULTS_FILE, &mut result_files)?;
    let mut curve_files = Vec::new();
    collect_files(&args.results, LOSS_FILE, &mut curve_files)?;
    let mut reports = Vec::new();
    for f in &result_files {
        reports.extend(EvalReport::read_all(f)?);
    }
    if reports.is_empty() && curve_files.is_empty() {
        return Err(Error::Config(format!(
            "no {RESULTS_FILE} or {LOSS_FILE} under {}",
            args.results.display()
        )));
    }
    sort_reports(&mut reports);
    let out = args.out.clone().unwrap_or_else(|| root.join("report"));
    fs::create_dir_all(&out)?;
    let table = render_table(&reports);
    fs::write(out.join("report.txt"), &table)?;
    print!("{table}");

    let curves: Vec<LossCurveFile> = curve_files.iter().map(|f| read_json(f)).collect::<Result<_>>()?;
    if !curves.is_empty() {
        let path = out.join("loss_curves.svg");
        plot::loss_curves(&curves, &path)?;
        println!("plot -> {}", path.display());
    }
    let few_shot: Vec<&EvalReport> = reports
        .iter()
        .filter(|r| r.setting == Setting::FewShot && r.shots.is_some())
        .collect();
    if !few_shot.is_empty() {
        let path = out.join("accuracy_vs_k.svg");
        plot::accuracy_vs_k(&few_shot, &path)?;
        println!("plot -> {}", path.display());
    }
    Ok(())
}
