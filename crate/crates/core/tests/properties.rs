use ndarray::Array2;
use proptest::prelude::*;

use graphau_pain::data::{
    class_weights_from_rates, load_manifest, save_manifest, split_subject_disjoint, undersample,
    DatasetManifest, FrameRecord, ModeledAuSet, Provenance,
};
use graphau_pain::eval::metrics::{metrics_from_confusion, ConfusionMatrix};
use graphau_pain::facs::{compute_pspi, AuIntensityMap, RECOGNIZED_AUS};
use graphau_pain::training::loss::softmax_rows;

fn intensities() -> impl Strategy<Value = Vec<i64>> {
    proptest::collection::vec(0i64..=5, RECOGNIZED_AUS.len()).prop_map(|mut v| {
        // AU43 is binary and sits last.
        let last = v.len() - 1;
        v[last] %= 2;
        v
    })
}

fn manifest_from(rows: &[(Vec<i64>, u8)]) -> DatasetManifest {
    let modeled = ModeledAuSet::default();
    let recs = rows
        .iter()
        .enumerate()
        .map(|(i, (v, subj))| {
            let au =
                AuIntensityMap::from_pairs(RECOGNIZED_AUS.iter().copied().zip(v.iter().copied()))
                    .unwrap();
            FrameRecord::from_intensities(
                format!("f{i:04}"),
                format!("s{subj}"),
                format!("img/{i}.png"),
                au,
                &modeled,
            )
            .unwrap()
        })
        .collect();
    DatasetManifest::new(recs, modeled, Provenance::with_source("prop")).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pspi_stays_in_range(v in intensities()) {
        let au = AuIntensityMap::from_pairs(RECOGNIZED_AUS.iter().copied().zip(v)).unwrap();
        prop_assert!(compute_pspi(&au).unwrap().value() <= 16);
    }

    #[test]
    fn manifest_round_trips(rows in proptest::collection::vec((intensities(), 0u8..5), 0..20)) {
        let m = manifest_from(&rows);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        save_manifest(&m, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        prop_assert_eq!(back.records(), m.records());
        prop_assert_eq!(back.modeled_aus(), m.modeled_aus());
        prop_assert_eq!(&back.provenance, &m.provenance);
    }

    #[test]
    fn undersampling_only_drops_no_pain(rows in proptest::collection::vec((intensities(), 0u8..5), 1..40), seed in any::<u64>()) {
        let m = manifest_from(&rows);
        let out = undersample(&m, 0.5, seed).unwrap();
        for r in m.records() {
            let kept = out.get(&r.frame_id).is_some();
            if r.pspi.value() > 0 && r.occurrence.any_active() {
                prop_assert!(kept);
            }
            if !r.occurrence.any_active() {
                prop_assert!(!kept);
            }
        }
    }

    #[test]
    fn subject_split_is_disjoint(rows in proptest::collection::vec((intensities(), 0u8..6), 3..40), seed in any::<u64>()) {
        let m = manifest_from(&rows);
        prop_assume!(m.subjects().len() >= 2);
        let (a, b) = split_subject_disjoint(&m, 0.3, seed).unwrap();
        prop_assert_eq!(a.len() + b.len(), m.len());
        let sa = a.subjects();
        prop_assert!(b.subjects().iter().all(|s| !sa.contains(s)));
    }

    #[test]
    fn class_weights_sum_to_class_count(raw in proptest::collection::vec(1e-4f64..1.0, 2..8)) {
        let total: f64 = raw.iter().sum();
        let rates: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let w = class_weights_from_rates(&rates).unwrap();
        let s: f64 = w.as_slice().iter().sum();
        prop_assert!((s - rates.len() as f64).abs() < 1e-9);
        // Rarer classes never get smaller weights.
        for i in 0..rates.len() {
            for j in 0..rates.len() {
                if rates[i] < rates[j] {
                    prop_assert!(w.as_slice()[i] >= w.as_slice()[j]);
                }
            }
        }
    }

    #[test]
    fn class_weights_follow_permutation(raw in proptest::collection::vec(1e-4f64..1.0, 2..8), rot in 0usize..8) {
        let total: f64 = raw.iter().sum();
        let rates: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let k = rot % rates.len();
        let mut rotated = rates.clone();
        rotated.rotate_left(k);
        let w = class_weights_from_rates(&rates).unwrap();
        let mut expect = w.as_slice().to_vec();
        expect.rotate_left(k);
        let got = class_weights_from_rates(&rotated).unwrap();
        for (a, b) in got.as_slice().iter().zip(&expect) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_ignores_row_shifts(v in proptest::collection::vec(-30.0f64..30.0, 3), shift in -500.0f64..500.0) {
        let x = Array2::from_shape_vec((1, 3), v).unwrap();
        let a = softmax_rows(x.view());
        let b = softmax_rows((&x + shift).view());
        prop_assert!((a.sum() - 1.0).abs() < 1e-12);
        for (p, q) in a.iter().zip(b.iter()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn macro_f1_ignores_class_order(counts in proptest::collection::vec(0u64..40, 9)) {
        let rows: Vec<Vec<u64>> = counts.chunks(3).map(|c| c.to_vec()).collect();
        let perm = [2usize, 0, 1];
        let permuted: Vec<Vec<u64>> = (0..3).map(|i| (0..3).map(|j| rows[perm[i]][perm[j]]).collect()).collect();
        let a = ConfusionMatrix::from_counts(rows).unwrap();
        prop_assume!(a.total() > 0);
        let b = ConfusionMatrix::from_counts(permuted).unwrap();
        let (ma, mb) = (metrics_from_confusion(&a).unwrap(), metrics_from_confusion(&b).unwrap());
        prop_assert!((ma.macro_f1 - mb.macro_f1).abs() < 1e-9);
        prop_assert!((ma.accuracy - mb.accuracy).abs() < 1e-9);
        for m in [&ma, &mb] {
            for c in &m.per_class {
                prop_assert!((0.0..=100.0).contains(&c.f1));
            }
        }
    }
}
