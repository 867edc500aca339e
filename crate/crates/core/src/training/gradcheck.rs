//! Central finite-difference checks of the analytic gradients, in f64 on
//! down-scaled dimensions.

use ndarray::{Array1, Array2, Array3, ArrayD, ArrayView3, Dimension, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::backbone::{backbone_backward, backbone_forward};
use crate::model::config::{Ablation, BackboneSpec, ModelConfig};
use crate::model::fusion::{
    project_and_fuse, project_and_fuse_backward, ProjectionGrads, Projections,
};
use crate::model::gnn::{gnn_backward, gnn_forward};
use crate::model::graph::build_knn_graph;
use crate::model::head::{classify, classify_backward};
use crate::model::nodes::{au_node_features, au_node_features_backward};
use crate::model::occurrence::{au_occurrence_backward, au_occurrence_probs};
use crate::model::ops::min_abs;
use crate::model::params::{Group, ModelParams};
use crate::model::{backward_batch, forward_batch, Mode};
use crate::seeding::derive_rng;
use crate::training::loss::{au_bce_loss_grad, one_hot, weighted_ce_loss_grad};

pub const DEFAULT_STEP: f64 = 1e-5;
/// Samples with any ReLU pre-activation closer than this to zero are redrawn.
pub const KINK_MARGIN: f64 = 1e-3;
const MAX_ATTEMPTS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradStage {
    Backbone,
    AuHeads,
    GraphLayer,
    Occurrence,
    Fusion,
    Classifier,
    CrossEntropy,
    AuBce,
    Network(Ablation),
}

impl GradStage {
    pub fn name(self) -> String {
        match self {
            GradStage::Backbone => "backbone".into(),
            GradStage::AuHeads => "au_heads".into(),
            GradStage::GraphLayer => "graph_layer".into(),
            GradStage::Occurrence => "occurrence".into(),
            GradStage::Fusion => "fusion".into(),
            GradStage::Classifier => "classifier".into(),
            GradStage::CrossEntropy => "cross_entropy".into(),
            GradStage::AuBce => "au_bce".into(),
            GradStage::Network(a) => format!("network_{}", a.name()),
        }
    }
}

/// Down-scaled shapes for gradient checking.
#[derive(Debug, Clone, PartialEq)]
pub struct GradDims {
    pub n_au: usize,
    pub d_au: usize,
    pub proj_dim: usize,
    pub k: usize,
    pub d_pain: usize,
    pub input_side: usize,
    pub backbone_channels: Vec<usize>,
    pub batch: usize,
}

impl Default for GradDims {
    /// n_AU 4, d_AU 8, P 4, D 6, proj_dim 4.
    fn default() -> Self {
        Self {
            n_au: 4,
            d_au: 8,
            proj_dim: 4,
            k: 2,
            d_pain: 3,
            input_side: 32,
            backbone_channels: vec![2, 3, 4, 6],
            batch: 2,
        }
    }
}

impl GradDims {
    pub fn model_config(&self, ablation: Ablation) -> ModelConfig {
        ModelConfig {
            n_au: self.n_au,
            d_au: self.d_au,
            proj_dim: self.proj_dim,
            k: self.k,
            d_pain: self.d_pain,
            backbone: BackboneSpec {
                kind: "desk".into(),
                input_side: self.input_side,
                channels: self.backbone_channels.clone(),
            },
            ablation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub stage: String,
    pub seed: u64,
    pub max_rel_error: f64,
    pub entries: usize,
    /// Entries skipped because a perturbation changed the KNN graph.
    pub skipped: usize,
    /// Redraws needed to clear every ReLU kink by [`KINK_MARGIN`].
    pub resamples: usize,
    /// Location and values of the worst entry.
    pub worst: Option<WorstEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

struct Probe {
    value: f64,
    margin: f64,
    signature: Vec<usize>,
}

type Grads = (ModelParams<f64>, Vec<ArrayD<f64>>);

type ProbeFn<R> = Box<dyn Fn(&ModelParams<f64>, &[ArrayD<f64>]) -> Result<R>>;

struct Problem {
    params: ModelParams<f64>,
    inputs: Vec<ArrayD<f64>>,
    groups: Vec<Group>,
    eval: ProbeFn<Probe>,
    grad: ProbeFn<Grads>,
}

fn normal<D: Dimension>(rng: &mut ChaCha8Rng, shape: D, scale: f64) -> ndarray::Array<f64, D> {
    ndarray::Array::from_shape_simple_fn(shape, || scale * rng.sample::<f64, _>(StandardNormal))
}

/// Adds noise to every trainable tensor of `groups` so biases and
/// normalization parameters are generic rather than 0/1.
fn jitter(p: &mut ModelParams<f64>, groups: &[Group], rng: &mut ChaCha8Rng) {
    for t in p.tensors_mut() {
        if t.trainable && groups.contains(&t.group) {
            let mut d = t.data;
            d.mapv_inplace(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal));
        }
    }
}

fn dot(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    (a * b).sum()
}

fn dyn2(a: &Array2<f64>) -> ArrayD<f64> {
    a.clone().into_dyn()
}

fn as2(a: &ArrayD<f64>) -> Array2<f64> {
    a.clone().into_dimensionality().expect("rank 2")
}

fn as1(a: &ArrayD<f64>) -> Array1<f64> {
    a.clone().into_dimensionality().expect("rank 1")
}

fn as3(a: &ArrayD<f64>) -> Array3<f64> {
    a.clone().into_dimensionality().expect("rank 3")
}

fn build(stage: GradStage, dims: &GradDims, rng: &mut ChaCha8Rng) -> Result<Problem> {
    let ablation = match stage {
        GradStage::Network(a) => a,
        _ => Ablation::Full,
    };
    let cfg = dims.model_config(ablation);
    cfg.validate()?;
    let mut params = ModelParams::<f64>::init(&cfg, rng.random());
    let p_pos = cfg.positions();
    let d = cfg.channels();
    let (n, da, b) = (cfg.n_au, cfg.d_au, dims.batch);
    let problem = match stage {
        GradStage::Backbone => {
            jitter(&mut params, &[Group::Backbone], rng);
            let side = cfg.backbone.input_side;
            let img =
                Array3::from_shape_simple_fn((side, side, 3), || rng.random::<f64>()).into_dyn();
            let r = normal(rng, IxDyn(&[p_pos, d]), 1.0);
            let spec = cfg.backbone.clone();
            let (spec2, r2) = (spec.clone(), r.clone());
            Problem {
                params,
                inputs: vec![img],
                groups: vec![Group::Backbone],
                eval: Box::new(move |p, x| {
                    let (f, c) = backbone_forward(as3(&x[0]).view(), &p.backbone, &spec)?;
                    Ok(Probe {
                        value: dot(&dyn2(&f), &r),
                        margin: c.kink_margin(),
                        signature: vec![],
                    })
                }),
                grad: Box::new(move |p, x| {
                    let (_, c) = backbone_forward(as3(&x[0]).view(), &p.backbone, &spec2)?;
                    let mut g = p.zeros_like();
                    let dx =
                        backbone_backward(&c, &p.backbone, as2(&r2).view(), &mut g.backbone, true)
                            .expect("input gradient requested");
                    Ok((g, vec![dx.into_dyn()]))
                }),
            }
        }
        GradStage::AuHeads => {
            jitter(&mut params, &[Group::AuHeads], rng);
            let fmap = normal(rng, IxDyn(&[p_pos, d]), 1.0);
            let r = normal(rng, IxDyn(&[n, da]), 1.0);
            let r2 = r.clone();
            Problem {
                params,
                inputs: vec![fmap],
                groups: vec![Group::AuHeads],
                eval: Box::new(move |p, x| {
                    let (h, c) = au_node_features(as2(&x[0]).view(), &p.au_heads)?;
                    Ok(Probe {
                        value: dot(&dyn2(&h), &r),
                        margin: c.kink_margin(),
                        signature: vec![],
                    })
                }),
                grad: Box::new(move |p, x| {
                    let (_, c) = au_node_features(as2(&x[0]).view(), &p.au_heads)?;
                    let mut g = p.zeros_like();
                    let dx = au_node_features_backward(
                        &c,
                        &p.au_heads,
                        as2(&r2).view(),
                        &mut g.au_heads,
                    );
                    Ok((g, vec![dx.into_dyn()]))
                }),
            }
        }
        GradStage::GraphLayer => {
            jitter(&mut params, &[Group::Gnn], rng);
            let inputs: Vec<ArrayD<f64>> =
                (0..b).map(|_| normal(rng, IxDyn(&[n, da]), 1.0)).collect();
            // The graph is built once and held fixed.
            let graphs = inputs
                .iter()
                .map(|h| build_knn_graph(as2(h).view(), cfg.k))
                .collect::<Result<Vec<_>>>()?;
            let rs: Vec<ArrayD<f64>> = (0..b).map(|_| normal(rng, IxDyn(&[n, da]), 1.0)).collect();
            let (graphs2, rs2) = (graphs.clone(), rs.clone());
            Problem {
                params,
                inputs,
                groups: vec![Group::Gnn],
                eval: Box::new(move |p, x| {
                    let hs: Vec<Array2<f64>> = x.iter().map(as2).collect();
                    let views: Vec<_> = hs.iter().map(|h| h.view()).collect();
                    let (out, c, _) = gnn_forward(&views, &graphs, &p.gnn, Mode::Train)?;
                    let value = out.iter().zip(&rs).map(|(o, r)| dot(&dyn2(o), r)).sum();
                    Ok(Probe {
                        value,
                        margin: c.kink_margin(),
                        signature: vec![],
                    })
                }),
                grad: Box::new(move |p, x| {
                    let hs: Vec<Array2<f64>> = x.iter().map(as2).collect();
                    let views: Vec<_> = hs.iter().map(|h| h.view()).collect();
                    let (_, c, _) = gnn_forward(&views, &graphs2, &p.gnn, Mode::Train)?;
                    let mut g = p.zeros_like();
                    let go: Vec<Array2<f64>> = rs2.iter().map(as2).collect();
                    let dx = gnn_backward(&c, &p.gnn, &go, &mut g.gnn);
                    Ok((g, dx.into_iter().map(|a| a.into_dyn()).collect()))
                }),
            }
        }
        GradStage::Occurrence => {
            params.anchors = normal(rng, ndarray::Ix2(n, da), 1.0);
            let h = normal(rng, IxDyn(&[n, da]), 1.0);
            let r = Array1::from_shape_simple_fn(n, || rng.sample::<f64, _>(StandardNormal));
            let r2 = r.clone();
            Problem {
                params,
                inputs: vec![h],
                groups: vec![Group::Anchors],
                eval: Box::new(move |p, x| {
                    let h = as2(&x[0]);
                    let o = au_occurrence_probs(h.view(), p.anchors.view(), 0.5)?;
                    let degenerate = o.degenerate.iter().any(|&d| d);
                    Ok(Probe {
                        value: o.probs.dot(&r),
                        margin: if degenerate {
                            0.0
                        } else {
                            min_abs(h.iter().chain(&p.anchors))
                        },
                        signature: vec![],
                    })
                }),
                grad: Box::new(move |p, x| {
                    let mut g = p.zeros_like();
                    let dx = au_occurrence_backward(
                        as2(&x[0]).view(),
                        p.anchors.view(),
                        r2.view(),
                        &mut g.anchors,
                    );
                    Ok((g, vec![dx.into_dyn()]))
                }),
            }
        }
        GradStage::Fusion => {
            jitter(&mut params, &[Group::Projections], rng);
            let inputs = vec![
                normal(rng, IxDyn(&[p_pos, d]), 1.0),
                normal(rng, IxDyn(&[n, da]), 1.0),
                normal(rng, IxDyn(&[da]), 1.0),
            ];
            let r1 =
                Array1::from_shape_simple_fn(cfg.proj_dim, || rng.sample::<f64, _>(StandardNormal));
            let r2 =
                Array1::from_shape_simple_fn(cfg.proj_dim, || rng.sample::<f64, _>(StandardNormal));
            let (q1, q2) = (r1.clone(), r2.clone());
            Problem {
                params,
                inputs,
                groups: vec![Group::Projections],
                eval: Box::new(move |p, x| {
                    let proj = Projections {
                        b: &p.proj_b,
                        a: &p.proj_a,
                        g: &p.proj_g,
                    };
                    let (f, c) = project_and_fuse(
                        as2(&x[0]).view(),
                        as2(&x[1]).view(),
                        as1(&x[2]).view(),
                        proj,
                    )?;
                    Ok(Probe {
                        value: f.h_ab.dot(&r1) + f.h_g_proj.dot(&r2),
                        margin: c.kink_margin(),
                        signature: vec![],
                    })
                }),
                grad: Box::new(move |p, x| {
                    let proj = Projections {
                        b: &p.proj_b,
                        a: &p.proj_a,
                        g: &p.proj_g,
                    };
                    let (_, c) = project_and_fuse(
                        as2(&x[0]).view(),
                        as2(&x[1]).view(),
                        as1(&x[2]).view(),
                        proj,
                    )?;
                    let mut g = p.zeros_like();
                    let fg = project_and_fuse_backward(
                        &c,
                        proj,
                        q1.view(),
                        Some(q2.view()),
                        ProjectionGrads {
                            b: &mut g.proj_b,
                            a: &mut g.proj_a,
                            g: &mut g.proj_g,
                        },
                    );
                    Ok((
                        g,
                        vec![fg.h_b.into_dyn(), fg.nodes.into_dyn(), fg.h_g.into_dyn()],
                    ))
                }),
            }
        }
        GradStage::Classifier => {
            jitter(&mut params, &[Group::Classifier], rng);
            let inputs = vec![
                normal(rng, IxDyn(&[cfg.proj_dim]), 1.0),
                normal(rng, IxDyn(&[cfg.proj_dim]), 1.0),
            ];
            let r =
                Array1::from_shape_simple_fn(cfg.d_pain, || rng.sample::<f64, _>(StandardNormal));
            let r2 = r.clone();
            Problem {
                params,
                inputs,
                groups: vec![Group::Classifier],
                eval: Box::new(move |p, x| {
                    let y = classify(as1(&x[0]).view(), as1(&x[1]).view(), &p.classifier)?;
                    Ok(Probe {
                        value: y.dot(&r),
                        margin: f64::INFINITY,
                        signature: vec![],
                    })
                }),
                grad: Box::new(move |p, x| {
                    let mut g = p.zeros_like();
                    let (da, dg) = classify_backward(
                        as1(&x[0]).view(),
                        as1(&x[1]).view(),
                        &p.classifier,
                        r2.view(),
                        &mut g.classifier,
                    );
                    Ok((g, vec![da.into_dyn(), dg.into_dyn()]))
                }),
            }
        }
        GradStage::CrossEntropy => {
            let c = cfg.d_pain;
            let logits = normal(rng, IxDyn(&[b + 2, c]), 1.5);
            let labels: Vec<usize> = (0..b + 2).map(|_| rng.random_range(0..c)).collect();
            let y = one_hot::<f64>(&labels, c)?;
            let w: Vec<f64> = (0..c).map(|_| rng.random_range(0.1..3.0)).collect();
            let (y2, w2) = (y.clone(), w.clone());
            Problem {
                params,
                inputs: vec![logits],
                groups: vec![],
                eval: Box::new(move |_, x| {
                    let l = weighted_ce_loss_grad(as2(&x[0]).view(), y.view(), &w, 1e-8)?;
                    Ok(Probe {
                        value: l.value,
                        margin: f64::INFINITY,
                        signature: vec![],
                    })
                }),
                grad: Box::new(move |p, x| {
                    let l = weighted_ce_loss_grad(as2(&x[0]).view(), y2.view(), &w2, 1e-8)?;
                    Ok((p.zeros_like(), vec![l.grad.into_dyn()]))
                }),
            }
        }
        GradStage::AuBce => {
            let probs =
                ArrayD::from_shape_simple_fn(IxDyn(&[b, n]), || rng.random_range(0.05..0.95));
            let bits =
                Array2::from_shape_simple_fn(
                    (b, n),
                    || if rng.random_bool(0.5) { 1.0 } else { 0.0 },
                );
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..5.0)).collect();
            let (bits2, w2) = (bits.clone(), w.clone());
            Problem {
                params,
                inputs: vec![probs],
                groups: vec![],
                eval: Box::new(move |_, x| {
                    let l = au_bce_loss_grad(as2(&x[0]).view(), bits.view(), &w, 1e-8)?;
                    Ok(Probe {
                        value: l.value,
                        margin: f64::INFINITY,
                        signature: vec![],
                    })
                }),
                grad: Box::new(move |p, x| {
                    let l = au_bce_loss_grad(as2(&x[0]).view(), bits2.view(), &w2, 1e-8)?;
                    Ok((p.zeros_like(), vec![l.grad.into_dyn()]))
                }),
            }
        }
        GradStage::Network(_) => {
            jitter(&mut params, &Group::ALL, rng);
            let side = cfg.backbone.input_side;
            let images: Vec<Array3<f64>> = (0..b)
                .map(|_| Array3::from_shape_simple_fn((side, side, 3), || rng.random::<f64>()))
                .collect();
            let rl: Vec<Array1<f64>> = (0..b)
                .map(|_| {
                    Array1::from_shape_simple_fn(cfg.d_pain, || {
                        rng.sample::<f64, _>(StandardNormal)
                    })
                })
                .collect();
            let rp: Vec<Array1<f64>> = (0..b)
                .map(|_| Array1::from_shape_simple_fn(n, || rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let (cfg2, images2, rl2, rp2) = (cfg.clone(), images.clone(), rl.clone(), rp.clone());
            Problem {
                params,
                inputs: vec![],
                groups: Group::ALL.to_vec(),
                eval: Box::new(move |p, _| {
                    let views: Vec<ArrayView3<f64>> = images.iter().map(|a| a.view()).collect();
                    let fwd = forward_batch(&views, p, &cfg, Mode::Train)?;
                    let mut value = 0.0;
                    let mut signature = Vec::new();
                    let mut degenerate = false;
                    for (i, o) in fwd.outputs.iter().enumerate() {
                        value += o.logits.dot(&rl[i]) + o.probs.dot(&rp[i]);
                        degenerate |= o.degenerate.iter().any(|&d| d);
                        if let Some(g) = &o.graph {
                            signature.extend(g.neighbors().iter().flatten());
                        }
                    }
                    let margin = if degenerate {
                        0.0
                    } else {
                        fwd.kink_margin().min(min_abs(&p.anchors))
                    };
                    Ok(Probe {
                        value,
                        margin,
                        signature,
                    })
                }),
                grad: Box::new(move |p, _| {
                    let views: Vec<ArrayView3<f64>> = images2.iter().map(|a| a.view()).collect();
                    let fwd = forward_batch(&views, p, &cfg2, Mode::Train)?;
                    let mut g = p.zeros_like();
                    backward_batch(&fwd, p, Some(&rl2), Some(&rp2), &mut g, false);
                    Ok((g, vec![]))
                }),
            }
        }
    };
    Ok(problem)
}

/// Denominator floor per unit of |f|. Central differences carry rounding of
/// order |f|·ε/h, so gradients that are exactly zero (a bias feeding a batch
/// normalization, say) would otherwise read as large relative errors.
pub const FLOOR_PER_UNIT_LOSS: f64 = 1e-5;

fn relative_error(a: f64, n: f64, f: f64) -> f64 {
    let floor = (FLOOR_PER_UNIT_LOSS * f.abs().max(1.0)).max(1e-6);
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn set_param(p: &mut ModelParams<f64>, t: usize, j: usize, v: f64) -> f64 {
    let mut ts = p.tensors_mut();
    let s = ts[t].data.as_slice_mut().expect("contiguous tensor");
    std::mem::replace(&mut s[j], v)
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter of the stage and every stage input.
pub fn grad_check(stage: GradStage, dims: &GradDims, seed: u64, h: f64) -> Result<GradCheckReport> {
    let name = stage.name();
    let mut attempt = 0;
    let (mut prob, base) = loop {
        let mut rng = derive_rng(seed, &["gradcheck", &name, &attempt.to_string()]);
        let prob = build(stage, dims, &mut rng)?;
        let base = (prob.eval)(&prob.params, &prob.inputs)?;
        if base.margin >= KINK_MARGIN {
            break (prob, base);
        }
        attempt += 1;
        if attempt >= MAX_ATTEMPTS {
            return Err(Error::NumericFailure(format!(
                "no kink-free sample for {name} after {MAX_ATTEMPTS} draws"
            )));
        }
    };
    let (gp, gx) = (prob.grad)(&prob.params, &prob.inputs)?;
    let mut worst = 0.0f64;
    let mut worst_at = None;
    let mut entries = 0;
    let mut skipped = 0;

    let slots: Vec<(usize, usize)> = prob
        .params
        .tensors()
        .iter()
        .enumerate()
        .filter(|(_, t)| t.trainable && prob.groups.contains(&t.group))
        .map(|(i, t)| (i, t.data.len()))
        .collect();
    let analytic = gp.tensors();
    for (t, len) in slots {
        let a_slice = analytic[t].data.as_slice().expect("contiguous").to_vec();
        let tname = analytic[t].name.clone();
        for (j, &a) in a_slice.iter().enumerate().take(len) {
            let orig = set_param(&mut prob.params, t, j, 0.0);
            set_param(&mut prob.params, t, j, orig + h);
            let up = (prob.eval)(&prob.params, &prob.inputs)?;
            set_param(&mut prob.params, t, j, orig - h);
            let down = (prob.eval)(&prob.params, &prob.inputs)?;
            set_param(&mut prob.params, t, j, orig);
            if up.signature != base.signature || down.signature != base.signature {
                skipped += 1;
                continue;
            }
            let num = (up.value - down.value) / (2.0 * h);
            let e = relative_error(a, num, base.value);
            if e > worst || worst_at.is_none() {
                worst = worst.max(e);
                worst_at = Some(WorstEntry {
                    tensor: tname.clone(),
                    index: j,
                    analytic: a,
                    numeric: num,
                });
            }
            entries += 1;
        }
    }
    for (i, gi) in gx.iter().enumerate() {
        let a_slice = gi.as_slice().expect("contiguous").to_vec();
        for (j, &a) in a_slice.iter().enumerate() {
            let orig = prob.inputs[i].as_slice().expect("contiguous")[j];
            prob.inputs[i].as_slice_mut().expect("contiguous")[j] = orig + h;
            let up = (prob.eval)(&prob.params, &prob.inputs)?;
            prob.inputs[i].as_slice_mut().expect("contiguous")[j] = orig - h;
            let down = (prob.eval)(&prob.params, &prob.inputs)?;
            prob.inputs[i].as_slice_mut().expect("contiguous")[j] = orig;
            if up.signature != base.signature || down.signature != base.signature {
                skipped += 1;
                continue;
            }
            let num = (up.value - down.value) / (2.0 * h);
            let e = relative_error(a, num, base.value);
            if e > worst || worst_at.is_none() {
                worst = worst.max(e);
                worst_at = Some(WorstEntry {
                    tensor: format!("input{i}"),
                    index: j,
                    analytic: a,
                    numeric: num,
                });
            }
            entries += 1;
        }
    }
    Ok(GradCheckReport {
        stage: name,
        seed,
        max_rel_error: worst,
        entries,
        skipped,
        resamples: attempt,
        worst: worst_at,
    })
}
