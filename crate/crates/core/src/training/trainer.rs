//! The two training stages: AU-occurrence fine-tuning, then pain
//! classification on top of the transferred representation.

use std::io::Write;

use ndarray::{Array1, Array3, ArrayView3};
use rand::seq::SliceRandom;

use crate::checkpoint::Checkpoint;
use crate::data::{split_subject_disjoint, DatasetManifest, FrameRecord, ImageStore};
use crate::error::{Error, Result};
use crate::eval::report::{predict, report_from_predictions};
use crate::model::config::Ablation;
use crate::model::params::{Group, ModelParams};
use crate::model::{backward_batch, forward_batch, Mode};
use crate::seeding::derive_rng;
use crate::training::config::{Stage, TrainConfig};
use crate::training::history::{EpochRecord, StageRecord};
use crate::training::loss::{
    au_bce_loss_grad, au_positive_weights, bit_matrix, one_hot, stack_rows, weighted_ce_loss_grad,
};
use crate::training::optim::{Adam, AdamConfig};

/// Frames plus their decoded images.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub manifest: &'a DatasetManifest,
    pub images: &'a ImageStore,
}

/// Groups updated by each stage under a given wiring.
pub fn stage_groups(stage: Stage, ablation: Ablation) -> Vec<Group> {
    let gnn = ablation != Ablation::NoGnn;
    match stage {
        Stage::AuSft => {
            let mut g = vec![Group::Backbone, Group::AuHeads, Group::Anchors];
            if gnn {
                g.push(Group::Gnn);
            }
            g
        }
        Stage::Pain => match ablation {
            Ablation::BackboneOnly => vec![Group::Backbone, Group::BackboneOnlyHead],
            _ => {
                let mut g = vec![
                    Group::Backbone,
                    Group::AuHeads,
                    Group::Projections,
                    Group::Classifier,
                ];
                if gnn {
                    g.push(Group::Gnn);
                }
                g
            }
        },
    }
}

/// Fine-tunes the backbone and AU branch for occurrence prediction.
pub fn pretrain_au(
    start: Checkpoint,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    log: Option<&mut dyn Write>,
) -> Result<Checkpoint> {
    if cfg.stage != Stage::AuSft {
        return Err(Error::InvalidConfig(
            "pretrain_au needs an au_sft config".into(),
        ));
    }
    run_stage(start, data, cfg, log)
}

/// Trains the pain classifier. With `init`, the representation modules are
/// copied from it and the pain head is freshly initialized.
pub fn train_pain(
    start: Checkpoint,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    init: Option<&Checkpoint>,
    log: Option<&mut dyn Write>,
) -> Result<Checkpoint> {
    if cfg.stage != Stage::Pain {
        return Err(Error::InvalidConfig(
            "train_pain needs a pain config".into(),
        ));
    }
    if start.model.d_pain != cfg.scheme.classes() {
        return Err(Error::InvalidConfig(format!(
            "model has {} pain outputs, scheme {} has {} categories",
            start.model.d_pain,
            cfg.scheme,
            cfg.scheme.classes()
        )));
    }
    let mut ckpt = start;
    if let Some(init) = init {
        if !ckpt.model.representation_compatible(&init.model) {
            return Err(Error::IncompatibleCheckpoint(
                "initialization checkpoint has a different representation shape".into(),
            ));
        }
        ckpt.params
            .copy_groups_from(&init.params, &Group::REPRESENTATION);
        ckpt.params.reinit(&Group::PAIN_HEAD, cfg.seed);
        ckpt.history = init.history.clone();
        ckpt.stages = init.stages.clone();
    }
    run_stage(ckpt, data, cfg, log)
}

struct Split {
    train: DatasetManifest,
    val: Option<DatasetManifest>,
}

fn validation_split(manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<Split> {
    if cfg.val_fraction > 0.0 && manifest.subjects().len() >= 3 {
        let (train, val) = split_subject_disjoint(manifest, cfg.val_fraction, cfg.seed)?;
        Ok(Split {
            train,
            val: Some(val),
        })
    } else {
        Ok(Split {
            train: manifest.clone(),
            val: None,
        })
    }
}

fn load_batch(images: &ImageStore, records: &[&FrameRecord]) -> Result<Vec<Array3<f32>>> {
    records
        .iter()
        .map(|r| Ok(images.get(&r.frame_id)?.to_array::<f32>()))
        .collect()
}

fn run_stage(
    mut ckpt: Checkpoint,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<Checkpoint> {
    cfg.validate()?;
    ckpt.model.validate()?;
    if data.manifest.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.manifest.modeled_aus().len() != ckpt.model.n_au {
        return Err(Error::ShapeMismatch(format!(
            "manifest models {} AUs, network has {} AU nodes",
            data.manifest.modeled_aus().len(),
            ckpt.model.n_au
        )));
    }
    let split = validation_split(data.manifest, cfg)?;
    let train = &split.train;
    let modeled = train.modeled_aus().clone();
    let class_weights = match cfg.stage {
        Stage::Pain => cfg
            .class_weights
            .resolve(train, cfg.scheme)?
            .as_slice()
            .to_vec(),
        Stage::AuSft => Vec::new(),
    };
    let pos_weights = au_positive_weights(train);
    let model = ckpt.model.clone();
    let groups = stage_groups(cfg.stage, model.ablation);
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
        },
        &ckpt.params,
        &groups,
    );
    let records: Vec<&FrameRecord> = train.records().iter().collect();
    let classes = cfg.scheme.classes();

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut derive_rng(cfg.seed, &["epoch", &epoch.to_string()]));
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&FrameRecord> = chunk.iter().map(|&i| records[i]).collect();
            let arrays = load_batch(data.images, &batch)?;
            let views: Vec<ArrayView3<f32>> = arrays.iter().map(|a| a.view()).collect();
            let fwd = forward_batch(&views, &ckpt.params, &model, Mode::Train)?;
            let mut grads = ckpt.params.zeros_like();
            let loss = match cfg.stage {
                Stage::AuSft => {
                    let probs = stack_rows(
                        &fwd.outputs
                            .iter()
                            .map(|o| o.probs.clone())
                            .collect::<Vec<_>>(),
                    );
                    let bits: Vec<Vec<bool>> =
                        batch.iter().map(|r| r.occurrence_bits(&modeled)).collect();
                    let lg = au_bce_loss_grad(
                        probs.view(),
                        bit_matrix::<f32>(&bits).view(),
                        &pos_weights,
                        cfg.loss_eps,
                    )?;
                    let dp: Vec<Array1<f32>> =
                        lg.grad.rows().into_iter().map(|r| r.to_owned()).collect();
                    backward_batch(&fwd, &ckpt.params, None, Some(&dp), &mut grads, false);
                    lg.value
                }
                Stage::Pain => {
                    let logits = stack_rows(
                        &fwd.outputs
                            .iter()
                            .map(|o| o.logits.clone())
                            .collect::<Vec<_>>(),
                    );
                    let labels: Vec<usize> =
                        batch.iter().map(|r| r.label_index(cfg.scheme)).collect();
                    let y = one_hot::<f32>(&labels, classes)?;
                    let lg = weighted_ce_loss_grad(
                        logits.view(),
                        y.view(),
                        &class_weights,
                        cfg.loss_eps,
                    )?;
                    let dl: Vec<Array1<f32>> =
                        lg.grad.rows().into_iter().map(|r| r.to_owned()).collect();
                    backward_batch(&fwd, &ckpt.params, Some(&dl), None, &mut grads, false);
                    lg.value
                }
            };
            if !loss.is_finite() {
                return Err(Error::NumericFailure(format!(
                    "{} loss is {loss} at epoch {epoch}, step {}",
                    cfg.stage,
                    steps + 1
                )));
            }
            opt.step(&mut ckpt.params, &grads);
            fwd.commit_norm_stats(&mut ckpt.params);
            if !ckpt.params.is_finite() {
                return Err(Error::NumericFailure(format!(
                    "parameters became non-finite at epoch {epoch}"
                )));
            }
            loss_sum += loss as f64 * batch.len() as f64;
            seen += batch.len();
            steps += 1;
        }
        let mut rec = EpochRecord {
            stage: cfg.stage,
            epoch,
            train_loss: loss_sum / seen as f64,
            steps,
            val_loss: None,
            val_macro_f1: None,
            val_accuracy: None,
            val_au_f1: None,
        };
        if let Some(val) = &split.val {
            validate_epoch(
                &ckpt.params,
                &model,
                val,
                data.images,
                cfg,
                &class_weights,
                &mut rec,
            )?;
        }
        if let Some(w) = log.as_deref_mut() {
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        ckpt.history.push(rec);
    }
    ckpt.epoch = cfg.epochs;
    ckpt.train = Some(cfg.clone());
    ckpt.stages.push(StageRecord {
        stage: cfg.stage,
        epochs: cfg.epochs,
        seed: cfg.seed,
        ablation: model.ablation,
        frames: train.len(),
    });
    Ok(ckpt)
}

fn validate_epoch(
    params: &ModelParams<f32>,
    model: &crate::model::ModelConfig,
    val: &DatasetManifest,
    images: &ImageStore,
    cfg: &TrainConfig,
    class_weights: &[f64],
    rec: &mut EpochRecord,
) -> Result<()> {
    let preds = predict(params, model, val, images)?;
    let report = report_from_predictions(val, cfg.scheme, &preds)?;
    match cfg.stage {
        Stage::Pain => {
            let logits = stack_rows(
                &preds
                    .iter()
                    .map(|p| Array1::from(p.logits.clone()))
                    .collect::<Vec<_>>(),
            );
            let labels: Vec<usize> = val
                .records()
                .iter()
                .map(|r| r.label_index(cfg.scheme))
                .collect();
            let y = one_hot::<f64>(&labels, cfg.scheme.classes())?;
            let lg = weighted_ce_loss_grad(logits.view(), y.view(), class_weights, cfg.loss_eps)?;
            rec.val_loss = Some(lg.value);
            rec.val_macro_f1 = Some(report.pain.macro_f1);
            rec.val_accuracy = Some(report.pain.accuracy);
        }
        Stage::AuSft => {
            let probs = stack_rows(
                &preds
                    .iter()
                    .map(|p| Array1::from(p.probs.clone()))
                    .collect::<Vec<_>>(),
            );
            let bits: Vec<Vec<bool>> = val
                .records()
                .iter()
                .map(|r| r.occurrence_bits(val.modeled_aus()))
                .collect();
            let pw = au_positive_weights(val);
            let lg = au_bce_loss_grad(
                probs.view(),
                bit_matrix::<f64>(&bits).view(),
                &pw,
                cfg.loss_eps,
            )?;
            rec.val_loss = Some(lg.value);
            rec.val_au_f1 = Some(report.au.mean_f1);
        }
    }
    Ok(())
}
