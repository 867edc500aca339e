//! Flat `key = value` run configuration with dotted keys.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Unknown keys are rejected. Later sources win: built-in defaults, then the
//! config file, then command-line overrides. An empty value means "use the
//! preset" for keys documented that way.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// (key, default, description)
pub const SCHEMA: &[(&str, &str, &str)] = &[
    (
        "seed",
        "7",
        "master seed for synthesis, initialization, shuffling and splits",
    ),
    ("synth.count", "2000", "number of frames"),
    (
        "synth.mixture",
        "0.82,0.15,0.03",
        "NoPain,Mild,Obvious proportions",
    ),
    (
        "synth.background_rate",
        "0.3",
        "activation probability of label-irrelevant AUs",
    ),
    ("synth.subjects", "25", "number of synthetic subjects"),
    ("synth.label_rule", "pspi", "pspi | co_occurrence"),
    ("synth.frame_prefix", "syn", "frame id prefix"),
    (
        "synth.modeled_aus",
        "1,2,4,6,9,12,25,26",
        "AU codes the network predicts",
    ),
    ("synth.side", "96", "image side in pixels"),
    ("synth.grid", "6", "region grid side"),
    ("synth.noise", "0.05", "pixel noise standard deviation"),
    (
        "synth.regions",
        "",
        "empty for the default layout, else code@row,col,rows,cols/...",
    ),
    (
        "synth.images",
        "png",
        "png: write image files | uri: self-describing synthetic refs",
    ),
    ("prepare.manifest", "", "input manifest"),
    (
        "prepare.undersample_keep",
        "",
        "keep rate for PSPI=0 frames; empty skips undersampling",
    ),
    (
        "prepare.relabel_from",
        "",
        "AU prediction file; empty skips hybrid relabeling",
    ),
    (
        "prepare.overlap_aus",
        "",
        "AUs whose original labels are kept when relabeling",
    ),
    (
        "prepare.fill_aus",
        "",
        "AUs taken from the predictions when relabeling",
    ),
    (
        "prepare.split",
        "",
        "held-out fraction; empty skips splitting",
    ),
    ("prepare.split_by", "subject", "subject | frame"),
    ("data.train", "", "training manifest"),
    ("data.test", "", "evaluation manifest"),
    ("model.preset", "desk", "desk | paper"),
    ("model.d_au", "", "AU node feature width (empty: preset)"),
    ("model.proj_dim", "", "projection width (empty: preset)"),
    ("model.k", "", "neighbors per AU node (empty: preset)"),
    (
        "model.ablation",
        "full",
        "full | no_graph_rep | no_gnn | backbone_only",
    ),
    (
        "model.input_side",
        "",
        "backbone input side (empty: preset)",
    ),
    (
        "model.channels",
        "",
        "backbone channels per block (empty: preset)",
    ),
    ("sft.preset", "desk", "desk | paper"),
    ("sft.lr", "", "learning rate (empty: preset)"),
    ("sft.batch_size", "", "batch size (empty: preset)"),
    ("sft.epochs", "", "epochs (empty: preset)"),
    ("sft.weight_decay", "", "L2 weight decay (empty: preset)"),
    (
        "sft.val_fraction",
        "",
        "held-out subject fraction (empty: preset)",
    ),
    ("pain.preset", "desk", "desk | paper"),
    ("pain.lr", "", "learning rate (empty: preset)"),
    ("pain.batch_size", "", "batch size (empty: preset)"),
    ("pain.epochs", "", "epochs (empty: preset)"),
    ("pain.weight_decay", "", "L2 weight decay (empty: preset)"),
    (
        "pain.val_fraction",
        "",
        "held-out subject fraction (empty: preset)",
    ),
    (
        "pain.class_weights",
        "auto",
        "auto | uniform | comma-separated weights",
    ),
    ("pain.scheme", "3cat", "3cat | 4cat"),
    (
        "pain.init",
        "",
        "AU fine-tuned checkpoint to start from; empty trains from scratch",
    ),
    ("eval.checkpoint", "", "checkpoint to evaluate"),
    ("eval.scheme", "", "3cat | 4cat (empty: pain.scheme)"),
    (
        "eval.png",
        "true",
        "also write the confusion matrix as a PNG",
    ),
    (
        "ablate.ablations",
        "full,no_graph_rep,no_gnn,backbone_only",
        "wirings to compare",
    ),
    ("report.evaluation", "", "evaluation.json to render"),
    ("report.ablation", "", "ablation.json to render"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            values: SCHEMA
                .iter()
                .map(|(k, v, _)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

fn known(key: &str) -> bool {
    SCHEMA.iter().any(|(k, _, _)| *k == key)
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !known(key) {
            return Err(Error::InvalidConfig(format!("unknown key {key:?}")));
        }
        self.values
            .insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Parses `key=value`.
    pub fn apply_override(&mut self, item: &str) -> Result<()> {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override {item:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn merge_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: "expected key = value".into(),
            })?;
            self.set(k.trim(), v).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        self.merge_text(&text, path)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("{key} is not in the schema"))
    }

    pub fn is_set(&self, key: &str) -> bool {
        !self.raw(key).is_empty()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        v.parse()
            .map_err(|e| Error::InvalidConfig(format!("{key} = {v:?}: {e}")))
    }

    /// `None` for an empty value.
    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.is_set(key) {
            self.get(key).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| Error::InvalidConfig(format!("{key} item {s:?}: {e}")))
            })
            .collect()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.is_set(key).then(|| PathBuf::from(self.raw(key)))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)
            .ok_or_else(|| Error::InvalidConfig(format!("{key} must be set")))
    }

    /// Fills an empty key with a preset value.
    pub fn fill(&mut self, key: &str, value: impl ToString) {
        if !self.is_set(key) {
            self.values.insert(key.to_string(), value.to_string());
        }
    }

    /// Every key with its current value, in schema order, as a loadable file.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        for (k, _, doc) in SCHEMA {
            let _ = writeln!(s, "# {doc}");
            let _ = writeln!(s, "{k} = {}", self.raw(k));
        }
        s
    }
}
