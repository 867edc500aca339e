//! Pain and AU metrics, confusion rendering and report tables.

pub mod metrics;
pub mod render;
pub mod report;

pub use metrics::{
    binary_metrics, confusion, metrics_from_confusion, ClassMetrics, ConfusionMatrix,
    MetricsReport, ZeroDivision,
};
pub use render::{render_confusion_log10, ConfusionRendering};
pub use report::{
    evaluate_model, format_ablation_table, format_au_table, format_pain_table, predict,
    report_from_predictions, AblationRow, AuReport, EvaluationReport, FramePrediction,
};
