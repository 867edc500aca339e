//! JSON-lines dataset manifests.
//!
//! Records live one per line in the manifest file. The modeled AU set and
//! provenance live in a sidecar `<manifest>.meta.json`; a manifest without a
//! sidecar uses the default modeled set and empty provenance.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facs::{
    categorize_pain_3, categorize_pain_4, compute_pspi, is_recognized, to_occurrence,
    AuIntensityMap, AuOccurrenceMap, PainCategory3, PainCategory4, PspiScore, Scheme, PSPI_AUS,
};

/// Default modeled AUs, ascending.
pub const DEFAULT_MODELED_AUS: [u8; 8] = [1, 2, 4, 6, 9, 12, 25, 26];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct ModeledAuSet(Vec<u8>);

impl ModeledAuSet {
    pub fn new(codes: Vec<u8>) -> Result<Self> {
        if codes.is_empty() {
            return Err(Error::InvalidConfig("modeled AU set is empty".into()));
        }
        if let Some(&bad) = codes.iter().find(|c| !is_recognized(**c)) {
            return Err(Error::UnknownAu(bad as i64));
        }
        if codes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "modeled AU codes must be unique and ascending: {codes:?}"
            )));
        }
        Ok(Self(codes))
    }

    pub fn codes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn position(&self, code: u8) -> Option<usize> {
        self.0.iter().position(|&c| c == code)
    }
}

impl Default for ModeledAuSet {
    fn default() -> Self {
        Self(DEFAULT_MODELED_AUS.to_vec())
    }
}

impl TryFrom<Vec<u8>> for ModeledAuSet {
    type Error = Error;
    fn try_from(v: Vec<u8>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ModeledAuSet> for Vec<u8> {
    fn from(s: ModeledAuSet) -> Vec<u8> {
        s.0
    }
}

/// How `label3`/`label4` were assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Categories follow from the PSPI score.
    #[default]
    Pspi,
    /// Synthetic-only: categories follow from AU pair co-occurrence.
    CoOccurrence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProvenanceStep {
    Synthesized {
        seed: u64,
        count: usize,
    },
    Undersampled {
        seed: u64,
        keep_rate: f64,
        removed_inactive: usize,
        removed_lottery: usize,
    },
    Hybrid {
        relabel_source: String,
        overlap_aus: Vec<u8>,
        fill_aus: Vec<u8>,
    },
    Split {
        seed: u64,
        test_fraction: f64,
        part: String,
        subject_disjoint: bool,
    },
    Copied {
        from: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub label_rule: LabelRule,
    #[serde(default)]
    pub steps: Vec<ProvenanceStep>,
    /// Directory that relative `image_ref` paths resolve against. Unset means
    /// the manifest's own directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_root: Option<PathBuf>,
}

impl Provenance {
    pub fn with_source(source: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            ..Self::default()
        }
    }

    /// AU codes whose occurrence bits were filled from model predictions.
    pub fn filled_aus(&self) -> BTreeSet<u8> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                ProvenanceStep::Hybrid { fill_aus, .. } => Some(fill_aus.iter().copied()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn is_hybrid(&self) -> bool {
        self.steps
            .iter()
            .any(|s| matches!(s, ProvenanceStep::Hybrid { .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame_id: String,
    pub subject_id: String,
    pub image_ref: String,
    pub au: AuIntensityMap,
    pub pspi: PspiScore,
    pub label3: PainCategory3,
    pub label4: PainCategory4,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_au: Option<AuOccurrenceMap>,
    pub occurrence: AuOccurrenceMap,
}

impl FrameRecord {
    /// Builds a record whose labels and occurrence are derived from `au`.
    pub fn from_intensities(
        frame_id: impl Into<String>,
        subject_id: impl Into<String>,
        image_ref: impl Into<String>,
        au: AuIntensityMap,
        modeled: &ModeledAuSet,
    ) -> Result<Self> {
        let pspi = compute_pspi(&au)?;
        Ok(Self {
            frame_id: frame_id.into(),
            subject_id: subject_id.into(),
            image_ref: image_ref.into(),
            occurrence: to_occurrence(&au).restricted_to(modeled.codes()),
            au,
            pspi,
            label3: categorize_pain_3(pspi),
            label4: categorize_pain_4(pspi),
            predicted_au: None,
        })
    }

    pub fn label_index(&self, scheme: Scheme) -> usize {
        match scheme {
            Scheme::Three => self.label3.index(),
            Scheme::Four => self.label4.index(),
        }
    }

    /// Occurrence bits in modeled-set order.
    pub fn occurrence_bits(&self, modeled: &ModeledAuSet) -> Vec<bool> {
        modeled
            .codes()
            .iter()
            .map(|&c| self.occurrence.get(c).unwrap_or(false))
            .collect()
    }

    fn check(&self, modeled: &ModeledAuSet, provenance: &Provenance) -> Result<()> {
        let bad = |message: String| Error::InconsistentRecord {
            frame_id: self.frame_id.clone(),
            message,
        };
        if PSPI_AUS.iter().all(|&c| self.au.get(c).is_some()) {
            let expected = compute_pspi(&self.au)?;
            if expected != self.pspi {
                return Err(bad(format!("pspi {} but AUs give {expected}", self.pspi)));
            }
        }
        if provenance.label_rule == LabelRule::Pspi {
            if categorize_pain_3(self.pspi) != self.label3 {
                return Err(bad(format!("label3 {:?} disagrees with pspi", self.label3)));
            }
            if categorize_pain_4(self.pspi) != self.label4 {
                return Err(bad(format!("label4 {:?} disagrees with pspi", self.label4)));
            }
        }
        let keys: Vec<u8> = self.occurrence.codes().collect();
        if keys != modeled.codes() {
            return Err(bad(format!(
                "occurrence keys {keys:?} differ from modeled set {:?}",
                modeled.codes()
            )));
        }
        let filled = provenance.filled_aus();
        for &code in modeled.codes() {
            if filled.contains(&code) {
                continue;
            }
            if let Some(intensity) = self.au.get(code) {
                if self.occurrence.get(code) != Some(intensity >= 1) {
                    return Err(bad(format!(
                        "occurrence of AU{code} disagrees with intensity"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    modeled_aus: ModeledAuSet,
    provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    records: Vec<FrameRecord>,
    modeled_aus: ModeledAuSet,
    pub provenance: Provenance,
}

impl DatasetManifest {
    /// Sorts records by frame_id and validates every record.
    pub fn new(
        mut records: Vec<FrameRecord>,
        modeled_aus: ModeledAuSet,
        provenance: Provenance,
    ) -> Result<Self> {
        records.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
        if let Some(w) = records.windows(2).find(|w| w[0].frame_id == w[1].frame_id) {
            return Err(Error::DuplicateFrameId(w[0].frame_id.clone()));
        }
        for r in &records {
            r.check(&modeled_aus, &provenance)?;
        }
        Ok(Self {
            records,
            modeled_aus,
            provenance,
        })
    }

    pub fn empty(modeled_aus: ModeledAuSet) -> Self {
        Self {
            records: Vec::new(),
            modeled_aus,
            provenance: Provenance::default(),
        }
    }

    pub fn records(&self) -> &[FrameRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<FrameRecord> {
        self.records
    }

    pub fn modeled_aus(&self) -> &ModeledAuSet {
        &self.modeled_aus
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, frame_id: &str) -> Option<&FrameRecord> {
        self.records
            .binary_search_by(|r| r.frame_id.as_str().cmp(frame_id))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Same modeled set and provenance, different records.
    pub fn with_records(&self, records: Vec<FrameRecord>) -> Result<Self> {
        Self::new(records, self.modeled_aus.clone(), self.provenance.clone())
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.subject_id.as_str()).collect()
    }

    /// Per-category counts under `scheme`.
    pub fn category_counts(&self, scheme: Scheme) -> Vec<usize> {
        let mut counts = vec![0; scheme.classes()];
        for r in &self.records {
            counts[r.label_index(scheme)] += 1;
        }
        counts
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = fs::File::open(path)?;
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FrameRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(record.frame_id.clone()) {
            return Err(Error::DuplicateFrameId(record.frame_id));
        }
        records.push(record);
    }
    let side = sidecar_path(path);
    let (modeled, provenance) = if side.exists() {
        let meta: Sidecar =
            serde_json::from_slice(&fs::read(&side)?).map_err(|e| Error::Parse {
                path: side.clone(),
                line: e.line(),
                message: e.to_string(),
            })?;
        (meta.modeled_aus, meta.provenance)
    } else {
        (ModeledAuSet::default(), Provenance::default())
    };
    DatasetManifest::new(records, modeled, provenance)
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    write_records(manifest.records(), path)?;
    save_sidecar(manifest, path)
}

pub(crate) fn write_records(records: &[FrameRecord], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn save_sidecar(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let meta = Sidecar {
        modeled_aus: manifest.modeled_aus.clone(),
        provenance: manifest.provenance.clone(),
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, au4: i64) -> FrameRecord {
        let au = AuIntensityMap::from_pairs([
            (1, 0),
            (2, 0),
            (4, au4),
            (6, 0),
            (7, 0),
            (9, 0),
            (10, 0),
            (12, 1),
            (25, 0),
            (26, 0),
            (43, 0),
        ])
        .unwrap();
        FrameRecord::from_intensities(id, "s1", format!("{id}.png"), au, &ModeledAuSet::default())
            .unwrap()
    }

    #[test]
    fn empty_file_gives_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        fs::write(&path, "").unwrap();
        let m = load_manifest(&path).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.modeled_aus(), &ModeledAuSet::default());
    }

    #[test]
    fn single_line_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let m = DatasetManifest::new(
            vec![record("f1", 2)],
            ModeledAuSet::default(),
            Provenance::with_source("unit"),
        )
        .unwrap();
        save_manifest(&m, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(load_manifest(&path).unwrap(), m);
    }

    #[test]
    fn duplicate_frame_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let line = serde_json::to_string(&record("dup", 1)).unwrap();
        fs::write(&path, format!("{line}\n{line}\n")).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::DuplicateFrameId(id)) if id == "dup"));
    }

    #[test]
    fn unknown_key_rejected_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut v = serde_json::to_value(record("a", 1)).unwrap();
        v["extra"] = 1.into();
        let good = serde_json::to_string(&record("b", 0)).unwrap();
        fs::write(&path, format!("{good}\n{v}\n")).unwrap();
        match load_manifest(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_pspi_rejected() {
        let mut r = record("a", 3);
        r.pspi = PspiScore::new(2).unwrap();
        let err = DatasetManifest::new(vec![r], ModeledAuSet::default(), Provenance::default());
        assert!(matches!(err, Err(Error::InconsistentRecord { .. })));
    }

    #[test]
    fn records_sorted_by_frame_id() {
        let m = DatasetManifest::new(
            vec![record("c", 0), record("a", 1), record("b", 2)],
            ModeledAuSet::default(),
            Provenance::default(),
        )
        .unwrap();
        let ids: Vec<_> = m.records().iter().map(|r| r.frame_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(m.get("b").unwrap().pspi.value(), 2);
    }

    #[test]
    fn modeled_set_validation() {
        assert!(ModeledAuSet::new(vec![4, 1]).is_err());
        assert!(ModeledAuSet::new(vec![1, 1]).is_err());
        assert!(ModeledAuSet::new(vec![3]).is_err());
        assert_eq!(ModeledAuSet::default().len(), 8);
    }
}
