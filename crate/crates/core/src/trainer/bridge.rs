//! Two-stage adaptation: full fine-tuning on a source corpus, then prompt-only
//! tuning of the frozen result on a small target split.

use super::{train, Checkpoint, Provenance, Regime, StageRecord, TrainConfig, TrainData, TrainOutcome};
use crate::encoders::DualEncoder;
use crate::error::{Error, Result};
use crate::prompting::PromptConfig;
use crate::runconfig::content_hash;

#[derive(Debug)]
pub struct BridgeOutcome {
    pub stage1: Checkpoint,
    pub stage1_outcome: TrainOutcome,
    pub final_checkpoint: Checkpoint,
    pub stage2_outcome: TrainOutcome,
}

fn record(cfg: &TrainConfig, out: &TrainOutcome, data: &TrainData<'_>) -> Result<StageRecord> {
    Ok(StageRecord {
        regime: cfg.regime,
        epochs: out.epochs,
        steps: out.steps,
        final_loss: out.final_loss,
        config_hash: content_hash(cfg)?,
        dataset: cfg.source_dataset.clone().or_else(|| Some(format!("{} classes", data.class_names.len()))),
    })
}

/// Attach fresh prompts to a stage-1 model and tune only them.
pub fn prompt_stage(
    stage1: &Checkpoint,
    cfg: &TrainConfig,
    data: &TrainData<'_>,
    prompts: &PromptConfig,
) -> Result<(Checkpoint, TrainOutcome)> {
    if cfg.regime != Regime::PromptOnly {
        return Err(Error::config(format!("stage 2 runs prompt_only, got {}", cfg.regime)));
    }
    if !stage1.provenance.stages.iter().any(|s| s.regime == Regime::FullFt) {
        return Err(Error::config("stage 2 needs a checkpoint fine-tuned in stage 1 (full_ft)"));
    }
    if stage1.model.prompts.is_some() {
        return Err(Error::config("stage-1 checkpoint already carries prompts"));
    }
    let mut model = stage1.model.try_clone()?;
    model.attach_prompts(prompts.clone(), cfg.seed)?;
    let out = train(cfg, &mut model, data)?;
    let mut provenance = stage1.provenance.clone();
    provenance.stages.push(record(cfg, &out, data)?);
    provenance.config_hash = content_hash(&provenance.stages)?;
    Ok((Checkpoint::new(model, provenance), out))
}

/// Stage 1: `full_ft` on the source data. Stage 2: prompt-only on the target data.
pub fn bridge_and_prompt(
    model: DualEncoder,
    stage1_cfg: &TrainConfig,
    stage1_data: &TrainData<'_>,
    stage2_cfg: &TrainConfig,
    stage2_data: &TrainData<'_>,
    prompts: &PromptConfig,
) -> Result<BridgeOutcome> {
    if stage1_cfg.regime != Regime::FullFt {
        return Err(Error::config(format!("stage 1 runs full_ft, got {}", stage1_cfg.regime)));
    }
    if model.prompts.is_some() {
        return Err(Error::config("stage 1 starts from a model without prompts"));
    }
    stage2_data.class_names.iter().try_for_each(|c| model.check_vocab(std::slice::from_ref(c)))?;
    let mut model = model;
    let stage1_outcome = train(stage1_cfg, &mut model, stage1_data)?;
    let stages = vec![record(stage1_cfg, &stage1_outcome, stage1_data)?];
    let stage1 = Checkpoint::new(
        model,
        Provenance {
            config_hash: content_hash(&stages)?,
            stages,
        },
    );
    let (final_checkpoint, stage2_outcome) = prompt_stage(&stage1, stage2_cfg, stage2_data, prompts)?;
    Ok(BridgeOutcome {
        stage1,
        stage1_outcome,
        final_checkpoint,
        stage2_outcome,
    })
}
