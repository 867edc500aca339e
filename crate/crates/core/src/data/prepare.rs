//! Manifest transformations: undersampling, hybrid relabeling and splits.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::manifest::{DatasetManifest, ProvenanceStep};
use crate::error::{Error, Result};
use crate::facs::AuOccurrenceMap;
use crate::seeding::derive_rng;

pub const DEFAULT_KEEP_RATE: f64 = 0.1;

/// Drops frames without an active modeled AU, then keeps each remaining
/// PSPI = 0 frame with probability `keep_rate`.
///
/// Each lottery draw comes from a stream keyed by (seed, frame_id).
pub fn undersample(
    manifest: &DatasetManifest,
    keep_rate: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(keep_rate > 0.0 && keep_rate <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "keep_rate must lie in (0, 1], got {keep_rate}"
        )));
    }
    let modeled = manifest.modeled_aus().codes();
    let mut removed_inactive = 0;
    let mut removed_lottery = 0;
    let mut kept = Vec::with_capacity(manifest.len());
    for r in manifest.records() {
        if !modeled.iter().any(|&c| r.occurrence.get(c) == Some(true)) {
            removed_inactive += 1;
            continue;
        }
        if r.pspi.value() == 0 {
            let draw: f64 = derive_rng(seed, &["undersample", &r.frame_id]).random();
            if draw >= keep_rate {
                removed_lottery += 1;
                continue;
            }
        }
        kept.push(r.clone());
    }
    let mut out = manifest.with_records(kept)?;
    out.provenance.steps.push(ProvenanceStep::Undersampled {
        seed,
        keep_rate,
        removed_inactive,
        removed_lottery,
    });
    Ok(out)
}

/// Keeps original occurrence bits for `overlap` and takes `fill` bits from `predicted`.
pub fn merge_hybrid(
    original: &DatasetManifest,
    predicted: &BTreeMap<String, AuOccurrenceMap>,
    overlap: &[u8],
    fill: &[u8],
    relabel_source: &str,
) -> Result<DatasetManifest> {
    let overlap_set: BTreeSet<u8> = overlap.iter().copied().collect();
    let fill_set: BTreeSet<u8> = fill.iter().copied().collect();
    if let Some(c) = overlap_set.intersection(&fill_set).next() {
        return Err(Error::OverlappingSets(format!("AU{c} is in both sets")));
    }
    let union: BTreeSet<u8> = overlap_set.union(&fill_set).copied().collect();
    let modeled: BTreeSet<u8> = original.modeled_aus().codes().iter().copied().collect();
    if union != modeled {
        return Err(Error::OverlappingSets(format!(
            "overlap ∪ fill = {union:?} but modeled set is {modeled:?}"
        )));
    }

    let mut records = Vec::with_capacity(original.len());
    for r in original.records() {
        let pred = predicted
            .get(&r.frame_id)
            .ok_or_else(|| Error::MissingPrediction(r.frame_id.clone()))?;
        let mut merged = r.clone();
        for &code in &fill_set {
            let bit = pred
                .get(code)
                .ok_or_else(|| Error::MissingPrediction(format!("{} (AU{code})", r.frame_id)))?;
            merged.occurrence.set(code, bit);
        }
        merged.predicted_au = Some(pred.clone());
        records.push(merged);
    }
    let mut provenance = original.provenance.clone();
    provenance.steps.push(ProvenanceStep::Hybrid {
        relabel_source: relabel_source.to_string(),
        overlap_aus: overlap_set.into_iter().collect(),
        fill_aus: fill_set.into_iter().collect(),
    });
    DatasetManifest::new(records, original.modeled_aus().clone(), provenance)
}

/// Number of held-out units: round(n · fraction), kept within [1, n − 1].
fn held_out_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

fn check_fraction(test_fraction: f64) -> Result<()> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    Ok(())
}

fn tag_split(
    manifest: &DatasetManifest,
    records: Vec<crate::data::manifest::FrameRecord>,
    seed: u64,
    test_fraction: f64,
    part: &str,
    subject_disjoint: bool,
) -> Result<DatasetManifest> {
    let mut out = manifest.with_records(records)?;
    out.provenance.steps.push(ProvenanceStep::Split {
        seed,
        test_fraction,
        part: part.to_string(),
        subject_disjoint,
    });
    Ok(out)
}

/// Seeded subject-level split; returns (train, test).
pub fn split_subject_disjoint(
    manifest: &DatasetManifest,
    test_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    check_fraction(test_fraction)?;
    let mut subjects: Vec<&str> = manifest.subjects().into_iter().collect();
    if subjects.len() < 2 {
        return Err(Error::TooFewSubjects(subjects.len()));
    }
    let n_test = held_out_count(subjects.len(), test_fraction);
    subjects.shuffle(&mut derive_rng(seed, &["split", "subjects"]));
    let test_subjects: BTreeSet<&str> = subjects[..n_test].iter().copied().collect();
    let (test, train): (Vec<_>, Vec<_>) = manifest
        .records()
        .iter()
        .cloned()
        .partition(|r| test_subjects.contains(r.subject_id.as_str()));
    Ok((
        tag_split(manifest, train, seed, test_fraction, "train", true)?,
        tag_split(manifest, test, seed, test_fraction, "test", true)?,
    ))
}

/// Seeded frame-level split. Frames of one subject may land on both sides.
pub fn split_framewise(
    manifest: &DatasetManifest,
    test_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    check_fraction(test_fraction)?;
    if manifest.len() < 2 {
        return Err(Error::EmptyDataset);
    }
    let n_test = held_out_count(manifest.len(), test_fraction);
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    order.shuffle(&mut derive_rng(seed, &["split", "frames"]));
    let test_idx: BTreeSet<usize> = order[..n_test].iter().copied().collect();
    let (test, train): (Vec<_>, Vec<_>) = manifest
        .records()
        .iter()
        .enumerate()
        .partition(|(i, _)| test_idx.contains(i));
    let strip = |v: Vec<(usize, &crate::data::manifest::FrameRecord)>| {
        v.into_iter().map(|(_, r)| r.clone()).collect::<Vec<_>>()
    };
    Ok((
        tag_split(manifest, strip(train), seed, test_fraction, "train", false)?,
        tag_split(manifest, strip(test), seed, test_fraction, "test", false)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::{FrameRecord, ModeledAuSet, Provenance};
    use crate::facs::AuIntensityMap;

    fn rec(id: &str, subject: &str, au4: i64, au12: i64) -> FrameRecord {
        let au = AuIntensityMap::from_pairs([
            (1, 0),
            (2, 0),
            (4, au4),
            (6, 0),
            (7, 0),
            (9, 0),
            (10, 0),
            (12, au12),
            (25, 0),
            (26, 0),
            (43, 0),
        ])
        .unwrap();
        FrameRecord::from_intensities(id, subject, "x", au, &ModeledAuSet::default()).unwrap()
    }

    fn manifest(records: Vec<FrameRecord>) -> DatasetManifest {
        DatasetManifest::new(records, ModeledAuSet::default(), Provenance::default()).unwrap()
    }

    #[test]
    fn nothing_to_remove() {
        let m = manifest(
            (0..20)
                .map(|i| rec(&format!("f{i:02}"), "s", 1 + i % 3, 0))
                .collect(),
        );
        let out = undersample(&m, 0.1, 3).unwrap();
        assert_eq!(out.records(), m.records());
    }

    #[test]
    fn keep_rate_one_only_drops_inactive() {
        let m = manifest(vec![
            rec("a", "s", 0, 0),
            rec("b", "s", 0, 2),
            rec("c", "s", 2, 0),
        ]);
        let out = undersample(&m, 1.0, 0).unwrap();
        let ids: Vec<_> = out.records().iter().map(|r| r.frame_id.as_str()).collect();
        assert_eq!(ids, ["b", "c"]);
        assert!(matches!(
            out.provenance.steps.last(),
            Some(ProvenanceStep::Undersampled {
                removed_inactive: 1,
                removed_lottery: 0,
                ..
            })
        ));
    }

    #[test]
    fn keep_rate_validated() {
        let m = manifest(vec![rec("a", "s", 1, 0)]);
        assert!(undersample(&m, 0.0, 0).is_err());
        assert!(undersample(&m, 1.5, 0).is_err());
    }

    #[test]
    fn hybrid_keeps_overlap_bits() {
        let m = manifest(vec![rec("a", "s", 1, 0)]);
        let mut pred = AuOccurrenceMap::new();
        for c in ModeledAuSet::default().codes() {
            pred.set(*c, *c != 4);
        }
        let preds = BTreeMap::from([("a".to_string(), pred)]);
        let out = merge_hybrid(&m, &preds, &[4, 6, 9, 12, 25, 26], &[1, 2], "p").unwrap();
        let r = &out.records()[0];
        assert_eq!(r.occurrence.get(4), Some(true));
        assert_eq!(r.occurrence.get(12), Some(false));
        assert_eq!(r.occurrence.get(1), Some(true));
        assert_eq!(r.occurrence.get(2), Some(true));
        assert!(out.provenance.is_hybrid());

        let none = merge_hybrid(&m, &preds, ModeledAuSet::default().codes(), &[], "p").unwrap();
        assert_eq!(none.records()[0].occurrence, m.records()[0].occurrence);

        let all = merge_hybrid(&m, &preds, &[], ModeledAuSet::default().codes(), "p").unwrap();
        assert_eq!(all.records()[0].occurrence, preds["a"]);
    }

    #[test]
    fn hybrid_errors() {
        let m = manifest(vec![rec("a", "s", 1, 0)]);
        let empty = BTreeMap::new();
        assert!(matches!(
            merge_hybrid(&m, &empty, &[4, 6, 9, 12, 25, 26], &[1, 2], "p"),
            Err(Error::MissingPrediction(_))
        ));
        assert!(matches!(
            merge_hybrid(&m, &empty, &[1, 4, 6, 9, 12, 25, 26], &[1, 2], "p"),
            Err(Error::OverlappingSets(_))
        ));
        assert!(matches!(
            merge_hybrid(&m, &empty, &[4], &[1, 2], "p"),
            Err(Error::OverlappingSets(_))
        ));
    }

    #[test]
    fn subject_split_counts_and_disjointness() {
        let recs: Vec<_> = (0..50)
            .map(|i| rec(&format!("f{i:03}"), &format!("s{}", i % 10), 1, 0))
            .collect();
        let m = manifest(recs);
        let (train, test) = split_subject_disjoint(&m, 0.3, 11).unwrap();
        assert_eq!(test.subjects().len(), 3);
        assert!(train.subjects().is_disjoint(&test.subjects()));
        assert_eq!(train.len() + test.len(), m.len());
        let (train2, test2) = split_subject_disjoint(&m, 0.3, 11).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn two_subjects_split_one_each() {
        let m = manifest(vec![
            rec("a", "s1", 1, 0),
            rec("b", "s2", 1, 0),
            rec("c", "s2", 2, 0),
        ]);
        let (train, test) = split_subject_disjoint(&m, 0.5, 0).unwrap();
        assert_eq!(train.subjects().len(), 1);
        assert_eq!(test.subjects().len(), 1);
    }

    #[test]
    fn single_subject_rejected() {
        let m = manifest(vec![rec("a", "s1", 1, 0), rec("b", "s1", 1, 0)]);
        assert!(matches!(
            split_subject_disjoint(&m, 0.5, 0),
            Err(Error::TooFewSubjects(1))
        ));
        let (train, test) = split_framewise(&m, 0.5, 0).unwrap();
        assert_eq!((train.len(), test.len()), (1, 1));
    }
}
