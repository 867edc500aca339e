//! Runs the four wirings under identical data, seeds and schedules.

use crate::checkpoint::Checkpoint;
use crate::error::Result;
use crate::eval::report::{evaluate_model, EvaluationReport};
use crate::model::{Ablation, ModelConfig, ModelParams};
use crate::training::config::TrainConfig;
use crate::training::trainer::{pretrain_au, train_pain, TrainData};

#[derive(Debug, Clone)]
pub struct AblationPlan {
    /// Shared topology; the ablation field is overwritten per variant.
    pub model: ModelConfig,
    pub init_seed: u64,
    /// Skipped when `sft.epochs == 0`.
    pub sft: TrainConfig,
    pub pain: TrainConfig,
    pub ablations: Vec<Ablation>,
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub ablation: Ablation,
    pub checkpoint: Checkpoint,
    pub report: EvaluationReport,
}

/// Variants that keep the graph layer share one AU fine-tuning run; the
/// graph-free variant gets its own, since its representation differs.
pub fn run_ablations(
    plan: &AblationPlan,
    train: TrainData<'_>,
    test: TrainData<'_>,
    progress: &mut dyn FnMut(&str),
) -> Result<Vec<AblationOutcome>> {
    let mut sft_with_gnn: Option<Checkpoint> = None;
    let mut sft_without_gnn: Option<Checkpoint> = None;
    let mut out = Vec::with_capacity(plan.ablations.len());
    for &ablation in &plan.ablations {
        let cfg = ModelConfig {
            ablation,
            ..plan.model.clone()
        };
        let start = Checkpoint::fresh(cfg.clone(), ModelParams::init(&cfg, plan.init_seed));
        let init = if plan.sft.epochs == 0 {
            None
        } else {
            let slot = if ablation != Ablation::NoGnn {
                &mut sft_with_gnn
            } else {
                &mut sft_without_gnn
            };
            if slot.is_none() {
                progress(&format!("au fine-tuning for {ablation}"));
                *slot = Some(pretrain_au(start.clone(), train, &plan.sft, None)?);
            }
            slot.clone()
        };
        progress(&format!("pain training for {ablation}"));
        let checkpoint = train_pain(start, train, &plan.pain, init.as_ref(), None)?;
        let (report, _) = evaluate_model(
            &checkpoint.params,
            &checkpoint.model,
            test.manifest,
            test.images,
            plan.pain.scheme,
        )?;
        out.push(AblationOutcome {
            ablation,
            checkpoint,
            report,
        });
    }
    Ok(out)
}
