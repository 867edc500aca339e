//! Losses, optimizer, the two-stage training protocol and gradient checks.

pub mod ablation;
pub mod config;
pub mod gradcheck;
pub mod history;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use ablation::{run_ablations, AblationOutcome, AblationPlan};
pub use config::{Stage, TrainConfig, WeightSpec};
pub use history::{EpochRecord, StageRecord};
pub use loss::{au_bce_loss, weighted_ce_loss};
pub use trainer::{pretrain_au, train_pain, TrainData};
