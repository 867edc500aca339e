//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process fails if any criterion does.
//!
//! `cargo test --test acceptance -- 5 6` runs a subset by number.

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use graphau_pain::data::manifest::{DatasetManifest, FrameRecord, ModeledAuSet, Provenance};
use graphau_pain::data::{
    class_weights_from_rates, synth_generate, undersample, LabelRule, SynthConfig,
};
use graphau_pain::eval::metrics::{confusion, metrics_from_confusion, ConfusionMatrix};
use graphau_pain::eval::render::{render_confusion_log10, ConfusionRendering};
use graphau_pain::eval::report::evaluate_model;
use graphau_pain::facs::{
    categorize_raw_3, categorize_raw_4, compute_pspi, AuIntensityMap, PainCategory3, PainCategory4,
    Scheme, RECOGNIZED_AUS,
};
use graphau_pain::model::{build_knn_graph, forward, Ablation, Mode, ModelConfig, ModelParams};
use graphau_pain::training::gradcheck::{grad_check, GradDims, GradStage, DEFAULT_STEP};
use graphau_pain::training::{
    pretrain_au, run_ablations, train_pain, AblationPlan, TrainConfig, TrainData, WeightSpec,
};
use graphau_pain::Checkpoint;

// Tolerances and budgets.
const WEIGHT_TOL: f64 = 1e-5;
const WEIGHT_SUM_TOL: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-4;
const LOGIT_TOL: f64 = 1e-6;
const MACRO_MEAN_TOL: f64 = 1e-9;
const SURVIVOR_BAND: (usize, usize) = (850, 1150);
const E2E_MIN_F1: f64 = 85.0;
const E2E_MIN_ACC: f64 = 90.0;
const ABLATION_GAP: f64 = 5.0;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(t: Instant, budget: Duration) -> Result<(), String> {
    let e = t.elapsed();
    check(e < budget, || format!("took {e:.2?}, budget {budget:?}"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

// 1

fn pspi_oracle() -> Result<String, String> {
    let t = Instant::now();
    let mut count = 0usize;
    let mut table = vec![[[[[[0i64; 2]; 6]; 6]; 6]; 6]; 6];
    for a4 in 0..6i64 {
        for a6 in 0..6i64 {
            for a7 in 0..6i64 {
                for a9 in 0..6i64 {
                    for a10 in 0..6i64 {
                        for a43 in 0..2i64 {
                            let map = AuIntensityMap::from_pairs([
                                (4, a4),
                                (6, a6),
                                (7, a7),
                                (9, a9),
                                (10, a10),
                                (43, a43),
                            ])
                            .map_err(|e| e.to_string())?;
                            let got = compute_pspi(&map).map_err(|e| e.to_string())?.value() as i64;
                            let orbit = if a6 > a7 { a6 } else { a7 };
                            let levator = if a9 > a10 { a9 } else { a10 };
                            let want = a4 + orbit + levator + a43;
                            check(got == want, || {
                                format!("AU4={a4} AU6={a6} AU7={a7} AU9={a9} AU10={a10} AU43={a43}: {got} != {want}")
                            })?;
                            check((0..=16).contains(&got), || format!("{got} out of range"))?;
                            table[a4 as usize][a6 as usize][a7 as usize][a9 as usize]
                                [a10 as usize][a43 as usize] = got;
                            count += 1;
                        }
                    }
                }
            }
        }
    }
    check(count == 15_552, || format!("{count} combinations"))?;
    // Raising any single AU never lowers the score.
    for a4 in 0..6 {
        for a6 in 0..6 {
            for a7 in 0..6 {
                for a9 in 0..6 {
                    for a10 in 0..6 {
                        for a43 in 0..2 {
                            let v = table[a4][a6][a7][a9][a10][a43];
                            let ups = [
                                (a4 < 5).then(|| table[a4 + 1][a6][a7][a9][a10][a43]),
                                (a6 < 5).then(|| table[a4][a6 + 1][a7][a9][a10][a43]),
                                (a7 < 5).then(|| table[a4][a6][a7 + 1][a9][a10][a43]),
                                (a9 < 5).then(|| table[a4][a6][a7][a9 + 1][a10][a43]),
                                (a10 < 5).then(|| table[a4][a6][a7][a9][a10 + 1][a43]),
                                (a43 < 1).then(|| table[a4][a6][a7][a9][a10][a43 + 1]),
                            ];
                            check(ups.iter().flatten().all(|&u| u >= v), || {
                                "monotonicity violated".into()
                            })?;
                        }
                    }
                }
            }
        }
    }
    within(t, Duration::from_secs(1))?;
    Ok(format!("{count} combinations in {:.2?}", t.elapsed()))
}

// 2

fn class_weight_oracle() -> Result<String, String> {
    let t = Instant::now();
    let w = class_weights_from_rates(&[0.82, 0.15, 0.03]).map_err(|e| e.to_string())?;
    let want = [0.08876, 0.48521, 2.42604];
    for (g, e) in w.as_slice().iter().zip(want) {
        check((g - e).abs() < WEIGHT_TOL, || format!("weight {g} vs {e}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let c = rng.random_range(2..=6);
        let raw: Vec<f64> = (0..c).map(|_| rng.random_range(1e-3..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let rates: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let w = class_weights_from_rates(&rates).map_err(|e| e.to_string())?;
        let s: f64 = w.as_slice().iter().sum();
        check((s - c as f64).abs() < WEIGHT_SUM_TOL, || {
            format!("sum {s} for C={c}")
        })?;
    }
    within(t, Duration::from_secs(1))?;
    Ok(format!("weights {:?}", w.as_slice()))
}

// 3

fn category_boundaries() -> Result<String, String> {
    use PainCategory3 as C3;
    use PainCategory4 as C4;
    let three = [
        (0, C3::NoPain),
        (1, C3::Mild),
        (4, C3::Mild),
        (5, C3::Obvious),
        (16, C3::Obvious),
    ];
    let four = [
        (0, C4::NoPain),
        (1, C4::Weak),
        (2, C4::Mild),
        (3, C4::Strong),
        (16, C4::Strong),
    ];
    for (p, c) in three {
        let got = categorize_raw_3(p).map_err(|e| e.to_string())?;
        check(got == c, || format!("3-cat pspi {p}: {got:?}"))?;
    }
    for (p, c) in four {
        let got = categorize_raw_4(p).map_err(|e| e.to_string())?;
        check(got == c, || format!("4-cat pspi {p}: {got:?}"))?;
    }
    check(
        categorize_raw_3(17).is_err() && categorize_raw_4(-1).is_err(),
        || "out-of-range pspi accepted".into(),
    )?;
    Ok("3-cat and 4-cat tables".into())
}

// 4

fn gradient_checks() -> Result<String, String> {
    let t = Instant::now();
    let mut stages = vec![
        GradStage::Backbone,
        GradStage::AuHeads,
        GradStage::GraphLayer,
        GradStage::Occurrence,
        GradStage::Fusion,
        GradStage::Classifier,
        GradStage::CrossEntropy,
        GradStage::AuBce,
    ];
    stages.extend(Ablation::ALL.iter().map(|&a| GradStage::Network(a)));
    let dims = GradDims::default();
    let mut worst = 0.0f64;
    for &stage in &stages {
        for seed in 0..5 {
            let r = grad_check(stage, &dims, seed, DEFAULT_STEP).map_err(|e| e.to_string())?;
            check(r.entries > 0, || {
                format!("{} seed {seed}: nothing checked", r.stage)
            })?;
            check(r.max_rel_error < GRAD_TOL, || format!("{r:?}"))?;
            worst = worst.max(r.max_rel_error);
        }
    }
    within(t, Duration::from_secs(120))?;
    Ok(format!(
        "{} stages x 5 seeds, worst {worst:.2e}",
        stages.len()
    ))
}

// 5

fn knn_oracle() -> Result<String, String> {
    let t = Instant::now();
    let (n, d, k) = (8, 16, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..500 {
        // Odd cases use small integers so exact similarity ties occur.
        let x = ndarray::Array2::from_shape_fn((n, d), |_| {
            if case % 2 == 0 {
                rng.sample::<f64, _>(StandardNormal)
            } else {
                rng.random_range(-2i32..=2) as f64
            }
        });
        let g = build_knn_graph(x.view(), k).map_err(|e| e.to_string())?;
        for i in 0..n {
            let mut cand: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, (0..d).map(|c| x[[i, c]] * x[[j, c]]).sum()))
                .collect();
            // Stable sort keeps smaller indices first among equal scores.
            cand.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            let mut want: Vec<usize> = cand[..k].iter().map(|c| c.0).collect();
            let mut got = g.neighbors()[i].clone();
            want.sort_unstable();
            got.sort_unstable();
            check(got == want, || {
                format!("case {case} node {i}: {got:?} vs {want:?}")
            })?;
        }
        let a = g.adjacency::<f64>();
        for i in 0..n {
            let row = a.row(i);
            check(a[[i, i]] == 0.0, || {
                format!("case {case}: self loop at {i}")
            })?;
            check(row.iter().filter(|&&v| v != 0.0).count() == k, || {
                format!("case {case}: row {i} edges")
            })?;
            check((row.sum() - 1.0).abs() < 1e-12, || {
                format!("case {case}: row {i} sum {}", row.sum())
            })?;
        }
    }
    within(t, Duration::from_secs(5))?;
    Ok(format!("500 matrices in {:.2?}", t.elapsed()))
}

// 6

/// Straight-line re-evaluation of the full desk network in eval mode, from
/// parameter values alone.
#[allow(clippy::needless_range_loop)]
fn oracle_forward(
    img: &Array3<f64>,
    p: &ModelParams<f64>,
    cfg: &ModelConfig,
) -> (Vec<f64>, Vec<f64>) {
    let side = cfg.backbone.input_side;
    // CHW activations as nested vectors.
    let mut act: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|c| {
            (0..side)
                .map(|y| (0..side).map(|x| img[[y, x, c]]).collect())
                .collect()
        })
        .collect();
    for conv in &p.backbone {
        let cin = act.len();
        let h = act[0].len();
        let oh = (h + 2 - 3) / 2 + 1;
        let cout = conv.bias.len();
        let mut next = vec![vec![vec![0.0; oh]; oh]; cout];
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..oh {
                    let mut s = conv.bias[co];
                    for ci in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= h as isize {
                                    continue;
                                }
                                s += conv.weight[[co, ci * 9 + ky * 3 + kx]]
                                    * act[ci][iy as usize][ix as usize];
                            }
                        }
                    }
                    next[co][oy][ox] = s.max(0.0);
                }
            }
        }
        act = next;
    }
    let dch = act.len();
    let g = act[0].len();
    let npos = g * g;
    let hb: Vec<Vec<f64>> = (0..npos)
        .map(|q| (0..dch).map(|c| act[c][q / g][q % g]).collect())
        .collect();

    let pooled: Vec<f64> = (0..dch)
        .map(|c| hb.iter().map(|r| r[c]).sum::<f64>() / npos as f64)
        .collect();
    let (n, dau) = (cfg.n_au, cfg.d_au);
    let mut ha = vec![vec![0.0; dau]; n];
    for i in 0..n {
        for k in 0..dau {
            let mut s = p.au_heads.bias[[i, k]];
            for c in 0..dch {
                s += p.au_heads.weight[[i, k, c]] * pooled[c];
            }
            ha[i][k] = s.max(0.0);
        }
    }

    let mut adj = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut taken = vec![false; n];
        taken[i] = true;
        for _ in 0..cfg.k {
            let mut best = usize::MAX;
            let mut best_sim = f64::NEG_INFINITY;
            for j in 0..n {
                if taken[j] {
                    continue;
                }
                let sim: f64 = (0..dau).map(|c| ha[i][c] * ha[j][c]).sum();
                if best == usize::MAX || sim > best_sim {
                    best = j;
                    best_sim = sim;
                }
            }
            taken[best] = true;
            adj[i][best] = 1.0 / cfg.k as f64;
        }
    }
    let affine = |w: &ndarray::Array2<f64>, b: &ndarray::Array1<f64>, x: &[f64]| -> Vec<f64> {
        (0..b.len())
            .map(|o| b[o] + (0..x.len()).map(|c| w[[o, c]] * x[c]).sum::<f64>())
            .collect()
    };
    let m1: Vec<Vec<f64>> = ha
        .iter()
        .map(|h| affine(&p.gnn.fc1.weight, &p.gnn.fc1.bias, h))
        .collect();
    let m2: Vec<Vec<f64>> = ha
        .iter()
        .map(|h| affine(&p.gnn.fc2.weight, &p.gnn.fc2.bias, h))
        .collect();
    let bn = &p.gnn.bn;
    let mut hg_nodes = vec![vec![0.0; dau]; n];
    for j in 0..n {
        for c in 0..dau {
            let mut z = m2[j][c];
            for i in 0..n {
                z += adj[i][j] * m1[i][c];
            }
            let normed = (z - bn.running_mean[c]) / (bn.running_var[c] + 1e-5).sqrt() * bn.gamma[c]
                + bn.beta[c];
            hg_nodes[j][c] = (ha[j][c] + normed).max(0.0);
        }
    }

    let mut probs = vec![0.0; n];
    for i in 0..n {
        let u: Vec<f64> = hg_nodes[i].iter().map(|v| v.max(0.0)).collect();
        let v: Vec<f64> = p.anchors.row(i).iter().map(|v| v.max(0.0)).collect();
        let uv: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        probs[i] = if nu == 0.0 || nv == 0.0 {
            0.0
        } else {
            (uv / (nu * nv)).min(1.0)
        };
    }

    let h_g: Vec<f64> = (0..dau)
        .map(|c| hg_nodes.iter().map(|r| r[c]).sum())
        .collect();
    let h_a: Vec<f64> = h_g.iter().map(|v| v / n as f64).collect();
    let a_proj: Vec<f64> = affine(&p.proj_a.weight, &p.proj_a.bias, &h_a)
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    let b_proj: Vec<Vec<f64>> = hb
        .iter()
        .map(|r| {
            affine(&p.proj_b.weight, &p.proj_b.bias, r)
                .iter()
                .map(|v| v.max(0.0))
                .collect()
        })
        .collect();
    let pd = cfg.proj_dim;
    let h_ab: Vec<f64> = (0..pd)
        .map(|q| {
            (0..npos)
                .map(|pos| a_proj[pos] * b_proj[pos][q])
                .sum::<f64>()
                .max(0.0)
        })
        .collect();
    let g_proj: Vec<f64> = affine(&p.proj_g.weight, &p.proj_g.bias, &h_g)
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    let joined: Vec<f64> = h_ab.iter().chain(&g_proj).copied().collect();
    (
        affine(&p.classifier.weight, &p.classifier.bias, &joined),
        probs,
    )
}

fn forward_oracle() -> Result<String, String> {
    let t = Instant::now();
    let cfg = ModelConfig::desk();
    let mut worst: f64 = 0.0;
    let mut spread: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let mut p: ModelParams<f64> = ModelParams::init(&cfg, seed);
        // Non-trivial biases and normalization statistics.
        let mut jitter = |v: &mut f64, s: f64| *v += s * rng.sample::<f64, _>(StandardNormal);
        for c in &mut p.backbone {
            c.bias.iter_mut().for_each(|v| jitter(v, 0.05));
        }
        p.au_heads.bias.iter_mut().for_each(|v| jitter(v, 0.1));
        for v in [
            &mut p.gnn.fc1.bias,
            &mut p.gnn.fc2.bias,
            &mut p.gnn.bn.beta,
            &mut p.gnn.bn.running_mean,
        ] {
            v.iter_mut().for_each(|x| jitter(x, 0.1));
        }
        p.gnn.bn.gamma.iter_mut().for_each(|v| jitter(v, 0.2));
        p.gnn
            .bn
            .running_var
            .iter_mut()
            .for_each(|v| *v = 0.5 + 1.5 * (*v - 1.0).abs().min(1.0));
        for a in [
            &mut p.proj_a,
            &mut p.proj_b,
            &mut p.proj_g,
            &mut p.classifier,
        ] {
            a.bias.iter_mut().for_each(|v| jitter(v, 0.05));
        }
        let mut irng = ChaCha8Rng::seed_from_u64(6000 + seed);
        let side = cfg.backbone.input_side;
        let img = Array3::from_shape_fn((side, side, 3), |_| irng.random_range(0.0..1.0));

        let out = forward(img.view(), &p, &cfg, Mode::Eval).map_err(|e| e.to_string())?;
        let (logits, probs) = oracle_forward(&img, &p, &cfg);
        for (a, b) in out.logits.iter().zip(&logits) {
            worst = worst.max((a - b).abs());
            spread = spread.max(b.abs());
        }
        for (a, b) in out.probs.iter().zip(&probs) {
            check((a - b).abs() < 1e-9, || {
                format!("seed {seed}: prob {a} vs {b}")
            })?;
        }
    }
    check(worst < LOGIT_TOL, || format!("max |dlogit| {worst:.3e}"))?;
    // A vanishing network would make the comparison vacuous.
    check(spread > 1e-3, || format!("logits collapse to {spread:.2e}"))?;
    within(t, Duration::from_secs(30))?;
    Ok(format!(
        "100 inputs, max |dlogit| {worst:.2e}, max |logit| {spread:.2e}"
    ))
}

// 7

fn metrics_goldens() -> Result<String, String> {
    let cm = confusion(&[0, 1, 1, 0], &[0, 0, 1, 2], 3).map_err(|e| e.to_string())?;
    let want = vec![vec![1, 1, 0], vec![0, 1, 0], vec![1, 0, 0]];
    check(cm.counts() == want.as_slice(), || {
        format!("confusion {:?}", cm.counts())
    })?;

    let m = metrics_from_confusion(
        &ConfusionMatrix::from_counts(vec![vec![50, 10], vec![10, 30]]).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let two = |v: f64| format!("{v:.2}");
    let c0 = &m.per_class[0];
    let c1 = &m.per_class[1];
    check(
        [c0.precision, c0.recall, c0.f1].map(two) == ["83.33", "83.33", "83.33"]
            && [c1.precision, c1.recall, c1.f1].map(two) == ["75.00", "75.00", "75.00"],
        || format!("per class {:?}", m.per_class),
    )?;
    check((m.macro_f1 - 79.17).abs() <= 0.01, || {
        format!("macro f1 {}", m.macro_f1)
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let c = rng.random_range(2..=4);
        let counts: Vec<Vec<u64>> = (0..c)
            .map(|_| (0..c).map(|_| rng.random_range(0..30)).collect())
            .collect();
        let Ok(cm) = ConfusionMatrix::from_counts(counts) else {
            continue;
        };
        let Ok(r) = metrics_from_confusion(&cm) else {
            continue;
        };
        let mean = |f: fn(&graphau_pain::eval::metrics::ClassMetrics) -> f64| {
            r.per_class.iter().map(f).sum::<f64>() / c as f64
        };
        check(
            (r.macro_f1 - mean(|x| x.f1)).abs() < MACRO_MEAN_TOL
                && (r.macro_precision - mean(|x| x.precision)).abs() < MACRO_MEAN_TOL
                && (r.macro_recall - mean(|x| x.recall)).abs() < MACRO_MEAN_TOL,
            || "macro values differ from per-class means".into(),
        )?;
    }

    let cm = ConfusionMatrix::from_counts(vec![vec![0, 9, 99], vec![1234, 0, 5], vec![7, 0, 999]])
        .unwrap();
    let r = render_confusion_log10(&cm, &["No Pain", "Mild", "Obvious"]);
    let scaled: Vec<String> = r.cells[0]
        .iter()
        .map(|c| format!("{:.2}", c.scaled))
        .collect();
    check(scaled == ["0.00", "1.00", "2.00"], || {
        format!("scaled {scaled:?}")
    })?;
    let text = r.to_text();
    for s in ["0.00", "1.00", "2.00"] {
        check(text.contains(s), || format!("rendering lacks {s}"))?;
    }
    let back = ConfusionRendering::parse_raw_counts(&text).map_err(|e| e.to_string())?;
    check(back.as_slice() == cm.counts(), || {
        format!("round trip {back:?}")
    })?;
    Ok("confusion, metrics and log10 rendering".into())
}

// 8

fn record(id: String, pairs: &[(u8, i64)], modeled: &ModeledAuSet) -> FrameRecord {
    let mut map = AuIntensityMap::new();
    for &c in &RECOGNIZED_AUS {
        map.set(c, 0).unwrap();
    }
    for &(c, v) in pairs {
        map.set(c, v).unwrap();
    }
    FrameRecord::from_intensities(id, "s0", "none", map, modeled).unwrap()
}

fn undersampling_stats() -> Result<String, String> {
    let modeled = ModeledAuSet::default();
    let mut recs = Vec::new();
    for i in 0..10_000 {
        recs.push(record(format!("zero{i:05}"), &[(1, 2)], &modeled));
    }
    for i in 0..300 {
        recs.push(record(format!("idle{i:03}"), &[], &modeled));
    }
    for i in 0..300 {
        recs.push(record(format!("pain{i:03}"), &[(4, 2), (6, 1)], &modeled));
    }
    let m = DatasetManifest::new(recs, modeled, Provenance::with_source("acceptance"))
        .map_err(|e| e.to_string())?;
    let out = undersample(&m, 0.1, 8).map_err(|e| e.to_string())?;
    let count = |p: &str| {
        out.records()
            .iter()
            .filter(|r| r.frame_id.starts_with(p))
            .count()
    };
    let zero = count("zero");
    check((SURVIVOR_BAND.0..=SURVIVOR_BAND.1).contains(&zero), || {
        format!("{zero} PSPI=0 survivors")
    })?;
    check(count("idle") == 0, || {
        format!("{} inactive survivors", count("idle"))
    })?;
    check(count("pain") == 300, || {
        format!("{} of 300 pain frames kept", count("pain"))
    })?;
    Ok(format!("{zero} of 10000 PSPI=0 frames kept"))
}

// 9

fn end_to_end() -> Result<String, String> {
    let t = Instant::now();
    let train = synth_generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let test = synth_generate(&SynthConfig {
        count: 500,
        seed: 8,
        frame_prefix: "tst".into(),
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let cfg = ModelConfig::desk();
    let start = Checkpoint::fresh(cfg.clone(), ModelParams::init(&cfg, 0));
    let data = TrainData {
        manifest: &train.manifest,
        images: &train.images,
    };
    let sft = pretrain_au(start.clone(), data, &TrainConfig::desk_au_sft(), None)
        .map_err(|e| e.to_string())?;
    let model = train_pain(start, data, &TrainConfig::desk_pain(), Some(&sft), None)
        .map_err(|e| e.to_string())?;
    let (r, _) = evaluate_model(
        &model.params,
        &model.model,
        &test.manifest,
        &test.images,
        Scheme::Three,
    )
    .map_err(|e| e.to_string())?;
    let (f1, acc) = (r.pain.macro_f1, r.pain.accuracy);
    check(f1 >= E2E_MIN_F1 && acc >= E2E_MIN_ACC, || {
        format!("macro F1 {f1:.2}, accuracy {acc:.2}")
    })?;
    within(t, Duration::from_secs(600))?;
    Ok(format!(
        "macro F1 {f1:.2}, accuracy {acc:.2} in {:.0?}",
        t.elapsed()
    ))
}

// 10

fn imbalance_trend() -> Result<String, String> {
    let mut auto = Vec::new();
    let mut uniform = Vec::new();
    for seed in 0..5u64 {
        let train = synth_generate(&SynthConfig {
            count: 600,
            seed: 100 + seed,
            ..SynthConfig::default()
        })
        .map_err(|e| e.to_string())?;
        // Balanced enough that minority recall is measured on real support.
        let test = synth_generate(&SynthConfig {
            count: 1000,
            seed: 200 + seed,
            frame_prefix: "tst".into(),
            mixture: vec![0.5, 0.25, 0.25],
            ..SynthConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let cfg = ModelConfig::desk();
        let start = Checkpoint::fresh(cfg.clone(), ModelParams::init(&cfg, seed));
        let data = TrainData {
            manifest: &train.manifest,
            images: &train.images,
        };
        let sft_cfg = TrainConfig {
            epochs: 3,
            seed,
            val_fraction: 0.0,
            ..TrainConfig::desk_au_sft()
        };
        let sft = pretrain_au(start.clone(), data, &sft_cfg, None).map_err(|e| e.to_string())?;
        for (weights, sink) in [
            (WeightSpec::Auto, &mut auto),
            (WeightSpec::Uniform, &mut uniform),
        ] {
            let pain = TrainConfig {
                epochs: 4,
                seed,
                val_fraction: 0.0,
                class_weights: weights,
                ..TrainConfig::desk_pain()
            };
            let m = train_pain(start.clone(), data, &pain, Some(&sft), None)
                .map_err(|e| e.to_string())?;
            let (r, _) = evaluate_model(
                &m.params,
                &m.model,
                &test.manifest,
                &test.images,
                Scheme::Three,
            )
            .map_err(|e| e.to_string())?;
            sink.push(r.pain.per_class[2].recall);
        }
    }
    let (ma, mu) = (median(auto.clone()), median(uniform.clone()));
    let detail = format!("median Obvious recall weighted {ma:.2} vs uniform {mu:.2}");
    check(ma > mu, || {
        format!("{detail}; weighted {auto:.2?}, uniform {uniform:.2?}")
    })?;
    Ok(detail)
}

// 11

fn ablation_trend() -> Result<String, String> {
    let wirings = [Ablation::Full, Ablation::NoGnn, Ablation::BackboneOnly];
    let mut f1 = vec![Vec::new(); wirings.len()];
    for seed in 0..5u64 {
        let mk = |count, s, prefix: &str| SynthConfig {
            count,
            seed: s,
            frame_prefix: prefix.into(),
            label_rule: LabelRule::CoOccurrence,
            mixture: vec![0.4, 0.3, 0.3],
            ..SynthConfig::default()
        };
        let train = synth_generate(&mk(800, 300 + seed, "syn")).map_err(|e| e.to_string())?;
        let test = synth_generate(&mk(600, 400 + seed, "tst")).map_err(|e| e.to_string())?;
        let plan = AblationPlan {
            model: ModelConfig::desk(),
            init_seed: seed,
            sft: TrainConfig {
                epochs: 4,
                seed,
                val_fraction: 0.0,
                ..TrainConfig::desk_au_sft()
            },
            pain: TrainConfig {
                epochs: 6,
                seed,
                val_fraction: 0.0,
                ..TrainConfig::desk_pain()
            },
            ablations: wirings.to_vec(),
        };
        let outcomes = run_ablations(
            &plan,
            TrainData {
                manifest: &train.manifest,
                images: &train.images,
            },
            TrainData {
                manifest: &test.manifest,
                images: &test.images,
            },
            &mut |_| {},
        )
        .map_err(|e| e.to_string())?;
        for (i, o) in outcomes.iter().enumerate() {
            f1[i].push(o.report.pain.macro_f1);
        }
    }
    let [full, no_gnn, backbone] = [0, 1, 2].map(|i| median(f1[i].clone()));
    let detail =
        format!("median macro F1 full {full:.2}, no_gnn {no_gnn:.2}, backbone_only {backbone:.2}");
    check(full >= no_gnn && full - backbone >= ABLATION_GAP, || {
        format!("{detail}; runs {f1:.2?}")
    })?;
    Ok(detail)
}

type Criterion = (u32, &'static str, fn() -> Result<String, String>);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "pspi oracle", pspi_oracle),
        (2, "class weight oracle", class_weight_oracle),
        (3, "category boundaries", category_boundaries),
        (4, "gradient checks", gradient_checks),
        (5, "knn graph oracle", knn_oracle),
        (6, "forward oracle", forward_oracle),
        (7, "metrics goldens", metrics_goldens),
        (8, "undersampling statistics", undersampling_stats),
        (9, "end-to-end synthetic regression", end_to_end),
        (10, "imbalance trend", imbalance_trend),
        (11, "ablation trend", ablation_trend),
    ];
    // Numeric arguments select criteria; libtest flags are ignored.
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    if std::env::args().any(|a| a == "--list") {
        for (n, name, _) in &criteria {
            println!("criterion_{n:02}_{}: test", name.replace(' ', "_"));
        }
        return;
    }
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
