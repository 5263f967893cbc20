use candle_core::DType;

use super::*;
use crate::testutil::{tiny_dataset, tiny_model};
use crate::videogen::ViewSet;

fn opts(frames: usize) -> EvalOptions {
    EvalOptions {
        views: ViewSet::single(16, frames),
        fusion: FusionMode::Embedding,
        batch_size: 25,
    }
}

#[test]
fn setting_defaults() {
    let o = EvalOptions::for_setting(Setting::FullySupervised, 32);
    assert_eq!(o.views.num_views(), 4);
    assert_eq!(o.views.frames_per_clip, 4);
    let o = EvalOptions::for_setting(Setting::ZeroShot, 32);
    assert_eq!((o.views.num_views(), o.views.frames_per_clip), (1, 8));
}

#[test]
fn random_model_is_at_chance() {
    // 4 balanced classes, 200 videos: top-1 within 3 sigma of 25%
    let ds = tiny_dataset(4, 1, 50);
    let m = tiny_model(DType::F32);
    let e = evaluate_dataset(&m, &ds, &ds.class_names(), &opts(2)).unwrap();
    assert_eq!(e.labels.len(), 200);
    let acc = e.top_k(1).unwrap();
    let sigma = 100.0 * (0.25f64 * 0.75 / 200.0).sqrt();
    assert!((acc - 25.0).abs() <= 3.0 * sigma, "top-1 {acc}");
}

#[test]
fn base_to_novel_report_is_consistent() {
    let ds = tiny_dataset(5, 2, 3);
    let m = tiny_model(DType::F32);
    let specs = make_splits(&ds.manifest, Setting::BaseToNovel, Some(2), 1, None).unwrap();
    let run = ProtocolRun {
        specs: &specs,
        source: &ds,
        target: None,
        train: None,
        eval: opts(4),
        method: "frozen".into(),
        config_hash: "h".into(),
        seed: 1,
    };
    let r = run_protocol(&run, &m).unwrap();
    assert_eq!(r.splits.len(), 3);
    r.validate().unwrap();
    for s in &r.splits {
        assert_eq!(s.hm.unwrap(), harmonic_mean(s.base_acc.unwrap(), s.novel_acc.unwrap()));
        assert_eq!(s.n_videos, 15);
    }
}

#[test]
fn zero_shot_rejects_overlap_and_vocab_gaps() {
    let ds = tiny_dataset(3, 1, 1);
    let m = tiny_model(DType::F32);
    let names = ds.class_names();
    let mut specs = make_splits(&ds.manifest, Setting::ZeroShot, None, 0, Some((&ds.manifest, &names[2..]))).unwrap();
    assert_eq!(specs[0].source_classes, names[..2].to_vec());
    specs[0].source_classes.push(names[2].clone());
    let mut run = ProtocolRun {
        specs: &specs,
        source: &ds,
        target: None,
        train: None,
        eval: opts(2),
        method: "m".into(),
        config_hash: "h".into(),
        seed: 0,
    };
    assert!(matches!(run_protocol(&run, &m), Err(Error::Config(_))));

    let mut gap = make_splits(&ds.manifest, Setting::ZeroShot, None, 0, Some((&ds.manifest, &names[2..]))).unwrap();
    gap[0].target_classes = vec!["purple hexagon".into()];
    run.specs = &gap;
    assert!(matches!(run_protocol(&run, &m), Err(Error::Vocab(_))));
}

#[test]
fn zero_shot_scores_target_classes_only() {
    let ds = tiny_dataset(4, 1, 2);
    let m = tiny_model(DType::F32);
    let names = ds.class_names();
    let specs = make_splits(&ds.manifest, Setting::ZeroShot, None, 0, Some((&ds.manifest, &names[1..3]))).unwrap();
    let run = ProtocolRun {
        specs: &specs,
        source: &ds,
        target: None,
        train: None,
        eval: opts(2),
        method: "m".into(),
        config_hash: "h".into(),
        seed: 0,
    };
    let r = run_protocol(&run, &m).unwrap();
    assert_eq!(r.splits[0].n_videos, 4);
    assert_eq!(r.splits[0].top5, 100.0);
}

#[test]
fn cluster_predictions_follow_nearest_text() {
    let texts = vec![vec![1.0f32, 0.0], vec![0.0, 1.0]];
    assert_eq!(nearest_class(&[0.9, 0.1], &texts), 0);
    assert_eq!(nearest_class(&[-0.1, 3.0], &texts), 1);
    assert_eq!(nearest_class(&[1.0, 1.0], &texts), 0);
}

#[test]
fn multi_view_encoding_matches_single_views() {
    let ds = tiny_dataset(2, 1, 2);
    let m = tiny_model(DType::F32);
    let samples: Vec<&VideoSample> = ds.val.iter().collect();
    let multi = EvalOptions {
        views: ViewSet {
            spatial_crops: 2,
            temporal_clips: 2,
            crop_size: 16,
            frames_per_clip: 2,
        },
        fusion: FusionMode::Decision,
        batch_size: 3,
    };
    let enc = encode_videos(&m, &samples, &multi).unwrap();
    assert_eq!(enc.views.len(), 4);
    assert_eq!(enc.views[0].dims(), &[4, 2, 16]);
    let sel = enc.select(&[2, 0]).unwrap();
    assert_eq!(sel.video_ids, vec![samples[2].video_id, samples[0].video_id]);
}
