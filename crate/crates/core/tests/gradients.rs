use graphau_pain::model::Ablation;
use graphau_pain::training::gradcheck::{grad_check, GradDims, GradStage, DEFAULT_STEP};

const TOLERANCE: f64 = 1e-4;

fn stages() -> Vec<GradStage> {
    let mut v = vec![
        GradStage::Backbone,
        GradStage::AuHeads,
        GradStage::GraphLayer,
        GradStage::Occurrence,
        GradStage::Fusion,
        GradStage::Classifier,
        GradStage::CrossEntropy,
        GradStage::AuBce,
    ];
    v.extend(Ablation::ALL.iter().map(|&a| GradStage::Network(a)));
    v
}

#[test]
fn every_stage_matches_finite_differences() {
    let dims = GradDims::default();
    for stage in stages() {
        for seed in 0..5 {
            let r = grad_check(stage, &dims, seed, DEFAULT_STEP).unwrap();
            println!("{r:?}");
            assert!(r.max_rel_error < TOLERANCE, "{r:?}");
            assert!(r.entries > 0);
        }
    }
}

#[test]
fn linear_classifier_is_exact_to_rounding() {
    for seed in 0..5 {
        let r = grad_check(
            GradStage::Classifier,
            &GradDims::default(),
            seed,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }
}
