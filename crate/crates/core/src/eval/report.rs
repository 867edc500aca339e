//! Model evaluation over a manifest and the text/JSON report layouts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::ArrayView3;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, ImageStore};
use crate::error::{Error, Result};
use crate::eval::metrics::{binary_metrics, confusion, metrics_from_confusion, MetricsReport};
use crate::facs::{AuOccurrenceMap, Scheme};
use crate::model::config::{Ablation, ModelConfig};
use crate::model::params::ModelParams;
use crate::model::{forward_batch, Mode};
use crate::scalar::Scalar;

pub const EVAL_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub frame_id: String,
    pub category: usize,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// Thresholded occurrence over the modeled AU set.
    pub au: AuOccurrenceMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuMetric {
    pub au: u8,
    pub f1: f64,
    pub accuracy: f64,
    pub positives: u64,
    pub zero_division: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuReport {
    pub per_au: Vec<AuMetric>,
    pub mean_f1: f64,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scheme: Scheme,
    pub class_names: Vec<String>,
    pub frames: usize,
    pub pain: MetricsReport,
    pub au: AuReport,
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode forward over every frame, in manifest order.
pub fn predict<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    manifest: &DatasetManifest,
    images: &ImageStore,
) -> Result<Vec<FramePrediction>> {
    let codes = manifest.modeled_aus().codes();
    if codes.len() != cfg.n_au {
        return Err(Error::ShapeMismatch(format!(
            "manifest models {} AUs, network has {} AU nodes",
            codes.len(),
            cfg.n_au
        )));
    }
    let mut out = Vec::with_capacity(manifest.len());
    for chunk in manifest.records().chunks(EVAL_BATCH) {
        let arrays = chunk
            .iter()
            .map(|r| Ok(images.get(&r.frame_id)?.to_array::<T>()))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<ArrayView3<T>> = arrays.iter().map(|a| a.view()).collect();
        let fwd = forward_batch(&views, params, cfg, Mode::Eval)?;
        for (r, o) in chunk.iter().zip(fwd.outputs) {
            let logits: Vec<f64> = o.logits.iter().map(|v| v.f64()).collect();
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericFailure(format!(
                    "non-finite logits for {}",
                    r.frame_id
                )));
            }
            let mut au = AuOccurrenceMap::new();
            for (&c, &b) in codes.iter().zip(&o.bits) {
                au.set(c, b);
            }
            out.push(FramePrediction {
                frame_id: r.frame_id.clone(),
                category: argmax(&logits),
                logits,
                probs: o.probs.iter().map(|v| v.f64()).collect(),
                au,
            });
        }
    }
    Ok(out)
}

/// Scores predictions against the manifest's labels.
pub fn report_from_predictions(
    manifest: &DatasetManifest,
    scheme: Scheme,
    preds: &[FramePrediction],
) -> Result<EvaluationReport> {
    if manifest.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if preds.len() != manifest.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: manifest.len(),
        });
    }
    let mut labels = Vec::with_capacity(preds.len());
    let mut cats = Vec::with_capacity(preds.len());
    for (r, p) in manifest.records().iter().zip(preds) {
        if r.frame_id != p.frame_id {
            return Err(Error::MissingPrediction(r.frame_id.clone()));
        }
        labels.push(r.label_index(scheme));
        cats.push(p.category);
    }
    let pain = metrics_from_confusion(&confusion(&cats, &labels, scheme.classes())?)?;
    let modeled = manifest.modeled_aus();
    let mut per_au = Vec::with_capacity(modeled.len());
    for &code in modeled.codes() {
        let truth: Vec<bool> = manifest
            .records()
            .iter()
            .map(|r| r.occurrence.get(code).unwrap_or(false))
            .collect();
        let guess: Vec<bool> = preds
            .iter()
            .map(|p| p.au.get(code).unwrap_or(false))
            .collect();
        let m = binary_metrics(&guess, &truth)?;
        per_au.push(AuMetric {
            au: code,
            f1: m.f1,
            accuracy: m.accuracy,
            positives: m.positives,
            zero_division: m.zero_division,
        });
    }
    let k = per_au.len().max(1) as f64;
    let au = AuReport {
        mean_f1: per_au.iter().map(|m| m.f1).sum::<f64>() / k,
        mean_accuracy: per_au.iter().map(|m| m.accuracy).sum::<f64>() / k,
        per_au,
    };
    Ok(EvaluationReport {
        scheme,
        class_names: scheme.class_names().into_iter().map(String::from).collect(),
        frames: preds.len(),
        pain,
        au,
    })
}

pub fn evaluate_model<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    manifest: &DatasetManifest,
    images: &ImageStore,
    scheme: Scheme,
) -> Result<(EvaluationReport, Vec<FramePrediction>)> {
    if manifest.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.d_pain != scheme.classes() {
        return Err(Error::InvalidConfig(format!(
            "network has {} pain outputs but scheme {scheme} has {} categories",
            cfg.d_pain,
            scheme.classes()
        )));
    }
    let preds = predict(params, cfg, manifest, images)?;
    let report = report_from_predictions(manifest, scheme, &preds)?;
    Ok((report, preds))
}

pub fn save_predictions(preds: &[FramePrediction], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for p in preds {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the per-frame AU occurrence maps from a predictions file.
pub fn load_au_predictions(path: &Path) -> Result<BTreeMap<String, AuOccurrenceMap>> {
    let f = fs::File::open(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: FramePrediction = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if out.insert(p.frame_id.clone(), p.au).is_some() {
            return Err(Error::DuplicateFrameId(p.frame_id));
        }
    }
    Ok(out)
}

/// Per-AU F1 and accuracy, one column per AU plus the average.
pub fn format_au_table(au: &AuReport) -> String {
    let mut head = format!("{:<8}", "");
    let mut f1 = format!("{:<8}", "F1");
    let mut acc = format!("{:<8}", "Acc.");
    for m in &au.per_au {
        head.push_str(&format!("{:>8}", format!("AU{}", m.au)));
        f1.push_str(&format!("{:>8.2}", m.f1));
        acc.push_str(&format!("{:>8.2}", m.accuracy));
    }
    head.push_str(&format!("{:>8}", "Avg."));
    f1.push_str(&format!("{:>8.2}", au.mean_f1));
    acc.push_str(&format!("{:>8.2}", au.mean_accuracy));
    format!("{head}\n{f1}\n{acc}\n")
}

/// Per-category F1/recall/precision with the unweighted averages and accuracy.
pub fn format_pain_table(report: &EvaluationReport) -> String {
    let w = report
        .class_names
        .iter()
        .map(|s| s.len())
        .max()
        .unwrap_or(0)
        .max("Accuracy".len())
        + 2;
    let mut s = format!(
        "{:<w$}{:>10}{:>10}{:>10}\n",
        "Category", "F1", "Recall", "Precision"
    );
    for (name, m) in report.class_names.iter().zip(&report.pain.per_class) {
        let _ = writeln!(
            s,
            "{name:<w$}{:>10.2}{:>10.2}{:>10.2}",
            m.f1, m.recall, m.precision
        );
    }
    let p = &report.pain;
    let _ = writeln!(
        s,
        "{:<w$}{:>10.2}{:>10.2}{:>10.2}",
        "Average", p.macro_f1, p.macro_recall, p.macro_precision
    );
    let _ = writeln!(s, "{:<w$}{:>10.2}", "Accuracy", p.accuracy);
    s
}

/// One row of the ablation comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub macro_f1: f64,
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub accuracy: f64,
}

impl AblationRow {
    pub fn from_report(ablation: Ablation, m: &MetricsReport) -> Self {
        Self {
            ablation,
            macro_f1: m.macro_f1,
            macro_recall: m.macro_recall,
            macro_precision: m.macro_precision,
            accuracy: m.accuracy,
        }
    }
}

pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let w = rows
        .iter()
        .map(|r| r.ablation.label().len())
        .max()
        .unwrap_or(0)
        .max("Method".len())
        + 2;
    let mut s = format!(
        "{:<w$}{:>10}{:>10}{:>11}{:>10}\n",
        "Method", "F1", "Recall", "Precision", "Accuracy"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<w$}{:>10.2}{:>10.2}{:>11.2}{:>10.2}",
            r.ablation.label(),
            r.macro_f1,
            r.macro_recall,
            r.macro_precision,
            r.accuracy
        );
    }
    s
}
