use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ops::conv_out_side;

/// Which parts of the network participate in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Classifier sees `[h_ab ∥ 0]`.
    NoGraphRep,
    /// Node features skip the graph layer: `H_a' = ReLU(H_a)`.
    NoGnn,
    /// Pooled backbone feature straight into an affine classifier.
    BackboneOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoGraphRep,
        Ablation::NoGnn,
        Ablation::BackboneOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoGraphRep => "no_graph_rep",
            Ablation::NoGnn => "no_gnn",
            Ablation::BackboneOnly => "backbone_only",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "Full",
            Ablation::NoGraphRep => "w/o graph rep.",
            Ablation::NoGnn => "w/o GNN",
            Ablation::BackboneOnly => "Only backbone",
        }
    }

    pub fn uses_au_branch(self) -> bool {
        self != Ablation::BackboneOnly
    }

    pub fn uses_gnn(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoGraphRep)
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation mode {s:?}")))
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Stack of 3×3 stride-2 convolutions with ReLU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub kind: String,
    pub input_side: usize,
    pub channels: Vec<usize>,
}

impl BackboneSpec {
    /// 172×172 input mapped to 36 positions × 2048 channels.
    pub fn paper() -> Self {
        Self {
            kind: "paper".into(),
            input_side: 172,
            channels: vec![64, 256, 512, 1024, 2048],
        }
    }

    /// Four blocks on a 96×96 input: 6×6 = 36 positions.
    pub fn desk(channels_out: usize) -> Self {
        Self {
            kind: "desk".into(),
            input_side: 96,
            channels: vec![8, 16, 32, channels_out],
        }
    }

    pub fn grid_side(&self) -> usize {
        self.channels
            .iter()
            .fold(self.input_side, |side, _| conv_out_side(side))
    }

    pub fn positions(&self) -> usize {
        self.grid_side().pow(2)
    }

    pub fn channels_out(&self) -> usize {
        *self.channels.last().unwrap_or(&3)
    }

    pub fn channels_in(&self, layer: usize) -> usize {
        if layer == 0 {
            3
        } else {
            self.channels[layer - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_au: usize,
    pub d_au: usize,
    pub proj_dim: usize,
    pub k: usize,
    pub d_pain: usize,
    pub backbone: BackboneSpec,
    pub ablation: Ablation,
}

impl ModelConfig {
    /// Full-size configuration (ResNet-50-shaped backbone).
    pub fn paper() -> Self {
        Self {
            n_au: 8,
            d_au: 512,
            proj_dim: 36,
            k: 3,
            d_pain: 3,
            backbone: BackboneSpec::paper(),
            ablation: Ablation::Full,
        }
    }

    /// CPU-sized configuration with the same topology.
    pub fn desk() -> Self {
        Self {
            n_au: 8,
            d_au: 64,
            proj_dim: 36,
            k: 3,
            d_pain: 3,
            backbone: BackboneSpec::desk(64),
            ablation: Ablation::Full,
        }
    }

    pub fn positions(&self) -> usize {
        self.backbone.positions()
    }

    pub fn channels(&self) -> usize {
        self.backbone.channels_out()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_au < 2 {
            return bad(format!("n_au = {} must be at least 2", self.n_au));
        }
        if self.k == 0 || self.k > self.n_au - 1 {
            return Err(Error::KTooLarge {
                k: self.k,
                nodes: self.n_au,
            });
        }
        if !matches!(self.d_pain, 3 | 4) {
            return bad(format!("d_pain must be 3 or 4, got {}", self.d_pain));
        }
        if self.d_au == 0 || self.proj_dim == 0 || self.backbone.channels.is_empty() {
            return bad("dimensions must be positive".into());
        }
        if self.backbone.channels.contains(&0) || self.backbone.input_side == 0 {
            return bad("backbone channels and input side must be positive".into());
        }
        if self.ablation.uses_au_branch() && self.proj_dim != self.positions() {
            return bad(format!(
                "feature fusion needs proj_dim == positions, got {} vs {}",
                self.proj_dim,
                self.positions()
            ));
        }
        Ok(())
    }

    /// Same representation-module shapes (backbone, AU heads, graph layer, anchors).
    pub fn representation_compatible(&self, other: &ModelConfig) -> bool {
        self.n_au == other.n_au && self.d_au == other.d_au && self.backbone == other.backbone
    }
}
