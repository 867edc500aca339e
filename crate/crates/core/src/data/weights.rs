use serde::{Deserialize, Serialize};

use crate::data::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::facs::Scheme;

/// Per-category loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0; classes])
    }

    /// Explicit weights, e.g. values reported for a dataset whose exact rates are unavailable.
    pub fn manual(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "class weights must be finite and positive: {weights:?}"
            )));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// w_j = C · (1/rate_j) / Σ_k (1/rate_k)
pub fn class_weights_from_rates(rates: &[f64]) -> Result<ClassWeights> {
    if let Some(j) = rates.iter().position(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::EmptyCategory(j.to_string()));
    }
    let c = rates.len() as f64;
    let inv: Vec<f64> = rates.iter().map(|r| r.recip()).collect();
    let total: f64 = inv.iter().sum();
    Ok(ClassWeights(inv.iter().map(|v| c * v / total).collect()))
}

pub fn compute_class_weights(manifest: &DatasetManifest, scheme: Scheme) -> Result<ClassWeights> {
    let counts = manifest.category_counts(scheme);
    if let Some(j) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyCategory(scheme.class_names()[j].to_string()));
    }
    let n = manifest.len() as f64;
    let rates: Vec<f64> = counts.iter().map(|&k| k as f64 / n).collect();
    class_weights_from_rates(&rates)
}
