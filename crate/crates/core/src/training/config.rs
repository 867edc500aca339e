use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{compute_class_weights, ClassWeights, DatasetManifest};
use crate::error::{Error, Result};
use crate::facs::Scheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    AuSft,
    Pain,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::AuSft => "au_sft",
            Stage::Pain => "pain",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "au_sft" => Ok(Stage::AuSft),
            "pain" => Ok(Stage::Pain),
            _ => Err(Error::InvalidConfig(format!("unknown stage {s:?}"))),
        }
    }
}

/// How pain-class weights are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "values")]
pub enum WeightSpec {
    /// Inverse-frequency weights from the training manifest.
    #[default]
    Auto,
    Uniform,
    Manual(Vec<f64>),
}

impl WeightSpec {
    pub fn resolve(&self, manifest: &DatasetManifest, scheme: Scheme) -> Result<ClassWeights> {
        let w = match self {
            WeightSpec::Auto => compute_class_weights(manifest, scheme)?,
            WeightSpec::Uniform => ClassWeights::uniform(scheme.classes()),
            WeightSpec::Manual(v) => ClassWeights::manual(v.clone())?,
        };
        if w.len() != scheme.classes() {
            return Err(Error::InvalidConfig(format!(
                "{} class weights for {} classes",
                w.len(),
                scheme.classes()
            )));
        }
        Ok(w)
    }
}

impl FromStr for WeightSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(WeightSpec::Auto),
            "uniform" => Ok(WeightSpec::Uniform),
            list => {
                let values = list
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::InvalidConfig(format!("class weights {list:?}: {e}")))?;
                Ok(WeightSpec::Manual(values))
            }
        }
    }
}

impl fmt::Display for WeightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightSpec::Auto => f.write_str("auto"),
            WeightSpec::Uniform => f.write_str("uniform"),
            WeightSpec::Manual(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Adam denominator guard.
    pub adam_eps: f64,
    pub seed: u64,
    pub class_weights: WeightSpec,
    /// Floor applied inside every log of the losses.
    pub loss_eps: f64,
    pub scheme: Scheme,
    /// Fraction of training subjects held out for per-epoch validation.
    pub val_fraction: f64,
}

impl TrainConfig {
    fn paper_common(stage: Stage, lr: f64, batch_size: usize, epochs: usize) -> Self {
        Self {
            stage,
            lr,
            batch_size,
            epochs,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 5e-4,
            adam_eps: 1e-8,
            seed: 0,
            class_weights: WeightSpec::Auto,
            loss_eps: 1e-8,
            scheme: Scheme::Three,
            val_fraction: 0.1,
        }
    }

    pub fn paper_au_sft() -> Self {
        Self::paper_common(Stage::AuSft, 1e-5, 16, 17)
    }

    pub fn paper_pain() -> Self {
        Self::paper_common(Stage::Pain, 1e-4, 64, 8)
    }

    /// Settings that converge on the small synthetic corpus.
    pub fn desk_au_sft() -> Self {
        Self {
            lr: 2e-3,
            epochs: 6,
            ..Self::paper_common(Stage::AuSft, 0.0, 16, 0)
        }
    }

    pub fn desk_pain() -> Self {
        Self {
            lr: 1e-3,
            epochs: 8,
            ..Self::paper_common(Stage::Pain, 0.0, 32, 0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("learning rate must be finite and nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight decay must be finite and nonnegative");
        }
        if !(self.adam_eps > 0.0 && self.loss_eps > 0.0) {
            return bad("epsilons must be positive");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("validation fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_defaults() {
        let s = TrainConfig::paper_au_sft();
        assert_eq!((s.lr, s.batch_size, s.epochs), (1e-5, 16, 17));
        let p = TrainConfig::paper_pain();
        assert_eq!((p.lr, p.batch_size, p.epochs), (1e-4, 64, 8));
        for c in [s, p] {
            assert_eq!(
                (c.beta1, c.beta2, c.weight_decay, c.loss_eps),
                (0.9, 0.999, 5e-4, 1e-8)
            );
        }
    }

    #[test]
    fn weight_spec_parsing() {
        assert_eq!("auto".parse::<WeightSpec>().unwrap(), WeightSpec::Auto);
        assert_eq!(
            "0.07, 0.33,2.6".parse::<WeightSpec>().unwrap(),
            WeightSpec::Manual(vec![0.07, 0.33, 2.6])
        );
        assert!("0.1,x".parse::<WeightSpec>().is_err());
    }
}
