use serde::{Deserialize, Serialize};

use crate::model::config::Ablation;
use crate::training::config::Stage;

/// One line of the training log and of a checkpoint's metric history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    /// Pain stage: macro F1 in percent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_macro_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
    /// AU stage: mean per-AU F1 in percent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_au_f1: Option<f64>,
}

/// A completed training stage, appended in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub frames: usize,
}
