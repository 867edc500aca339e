//! Composition of the stages per ablation wiring, with batched backward.

use ndarray::{Array1, Array2, Array3, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::model::backbone::{backbone_backward, backbone_forward, BackboneCache};
use crate::model::config::{Ablation, ModelConfig};
use crate::model::fusion::{
    pool_graph, pool_graph_backward, project_and_fuse, project_and_fuse_backward, FusionCache,
    ProjectionGrads, Projections,
};
use crate::model::gnn::{gnn_backward, gnn_forward, update_running_stats, GnnCache, NormStats};
use crate::model::graph::{build_knn_graph, AuGraph};
use crate::model::head::{classify, classify_backward};
use crate::model::nodes::{au_node_features, au_node_features_backward, NodeCache};
use crate::model::occurrence::{au_occurrence_backward, au_occurrence_probs, OCCURRENCE_THRESHOLD};
use crate::model::ops::{linear_vec, linear_vec_backward, mean_rows};
use crate::model::params::ModelParams;
use crate::model::Mode;
use crate::scalar::Scalar;

/// Per-frame outputs and retained intermediates.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub logits: Array1<T>,
    pub probs: Array1<T>,
    pub bits: Vec<bool>,
    pub degenerate: Vec<bool>,
    pub h_b: Array2<T>,
    pub h_a: Array2<T>,
    pub graph: Option<AuGraph>,
    pub h_a_graph: Array2<T>,
    pub h_g: Array1<T>,
    pub h_ab: Array1<T>,
    pub h_g_proj: Array1<T>,
}

struct SampleCache<T> {
    backbone: BackboneCache<T>,
    nodes: NodeCache<T>,
    fusion: Option<FusionCache<T>>,
    pooled_b: Array1<T>,
}

/// Batched forward result, holding everything the backward pass needs.
pub struct BatchForward<T> {
    pub outputs: Vec<ForwardOutput<T>>,
    samples: Vec<SampleCache<T>>,
    gnn: Option<GnnCache<T>>,
    norm_stats: Option<NormStats<T>>,
    ablation: Ablation,
}

impl<T: Scalar> BatchForward<T> {
    pub fn norm_stats(&self) -> Option<&NormStats<T>> {
        self.norm_stats.as_ref()
    }

    /// Smallest |z| over every ReLU pre-activation the pass went through.
    pub fn kink_margin(&self) -> f64 {
        let mut m = self.gnn.as_ref().map_or(f64::INFINITY, |g| g.kink_margin());
        for s in &self.samples {
            m = m.min(s.backbone.kink_margin()).min(s.nodes.kink_margin());
            if let Some(f) = &s.fusion {
                m = m.min(f.kink_margin());
            }
        }
        m
    }

    /// Folds this batch's normalization statistics into `params`.
    pub fn commit_norm_stats(&self, params: &mut ModelParams<T>) {
        if let Some(stats) = &self.norm_stats {
            update_running_stats(&mut params.gnn.bn, stats);
        }
    }
}

/// The AU occurrence branch runs the graph layer unless the wiring removes it.
/// Under `backbone_only` the branch still produces occurrence probabilities
/// but does not feed the classifier.
fn graph_layer_active(ablation: Ablation) -> bool {
    ablation != Ablation::NoGnn
}

/// Single-frame forward.
pub fn forward<T: Scalar>(
    image: ArrayView3<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<ForwardOutput<T>> {
    let mut b = forward_batch(&[image], params, cfg, mode)?;
    Ok(b.outputs.pop().expect("one output"))
}

pub fn forward_batch<T: Scalar>(
    images: &[ArrayView3<T>],
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<BatchForward<T>> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ablation = cfg.ablation;
    let mut samples = Vec::with_capacity(images.len());
    let mut fmaps = Vec::with_capacity(images.len());
    let mut node_feats = Vec::with_capacity(images.len());
    for img in images {
        let (h_b, bb) = backbone_forward(*img, &params.backbone, &cfg.backbone)?;
        let (h_a, nc) = au_node_features(h_b.view(), &params.au_heads)?;
        samples.push(SampleCache {
            backbone: bb,
            nodes: nc,
            fusion: None,
            pooled_b: mean_rows(h_b.view()),
        });
        fmaps.push(h_b);
        node_feats.push(h_a);
    }

    let (graphs, after, gnn_cache, norm_stats) = if graph_layer_active(ablation) {
        let graphs = node_feats
            .iter()
            .map(|h| build_knn_graph(h.view(), cfg.k))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = node_feats.iter().map(|h| h.view()).collect();
        let (after, cache, stats) = gnn_forward(&views, &graphs, &params.gnn, mode)?;
        (
            graphs.into_iter().map(Some).collect(),
            after,
            Some(cache),
            stats,
        )
    } else {
        // Node features are already rectified, so ReLU(H_a) = H_a.
        (vec![None; images.len()], node_feats.clone(), None, None)
    };

    let proj = Projections {
        b: &params.proj_b,
        a: &params.proj_a,
        g: &params.proj_g,
    };
    let mut outputs = Vec::with_capacity(images.len());
    for (i, graph) in graphs.into_iter().enumerate() {
        let h_ag = &after[i];
        let occ = au_occurrence_probs(h_ag.view(), params.anchors.view(), OCCURRENCE_THRESHOLD)?;
        let h_g = pool_graph(h_ag.view());
        let (logits, h_ab, h_g_proj) = if ablation == Ablation::BackboneOnly {
            let logits = linear_vec(
                samples[i].pooled_b.view(),
                params.backbone_only.weight.view(),
                params.backbone_only.bias.view(),
            );
            let z = Array1::zeros(cfg.proj_dim);
            (logits, z.clone(), z)
        } else {
            let (fused, fc) = project_and_fuse(fmaps[i].view(), h_ag.view(), h_g.view(), proj)?;
            samples[i].fusion = Some(fc);
            let g_in = if ablation == Ablation::NoGraphRep {
                Array1::zeros(cfg.proj_dim)
            } else {
                fused.h_g_proj.clone()
            };
            let logits = classify(fused.h_ab.view(), g_in.view(), &params.classifier)?;
            (logits, fused.h_ab, fused.h_g_proj)
        };
        outputs.push(ForwardOutput {
            logits,
            probs: occ.probs,
            bits: occ.bits,
            degenerate: occ.degenerate,
            h_b: std::mem::take(&mut fmaps[i]),
            h_a: std::mem::take(&mut node_feats[i]),
            graph,
            h_a_graph: h_ag.clone(),
            h_g,
            h_ab,
            h_g_proj,
        });
    }
    Ok(BatchForward {
        outputs,
        samples,
        gnn: gnn_cache,
        norm_stats,
        ablation,
    })
}

/// Backpropagates per-frame gradients of the loss with respect to logits
/// and/or occurrence probabilities, accumulating into `grads`. Returns
/// per-frame image gradients (HWC) when requested.
pub fn backward_batch<T: Scalar>(
    fwd: &BatchForward<T>,
    params: &ModelParams<T>,
    grad_logits: Option<&[Array1<T>]>,
    grad_probs: Option<&[Array1<T>]>,
    grads: &mut ModelParams<T>,
    want_input_grad: bool,
) -> Option<Vec<Array3<T>>> {
    let n = fwd.outputs.len();
    let ablation = fwd.ablation;
    let (n_au, d_au) = fwd.outputs[0].h_a_graph.dim();
    let mut d_hb: Vec<Array2<T>> = fwd
        .outputs
        .iter()
        .map(|o| Array2::zeros(o.h_b.dim()))
        .collect();
    let mut d_after: Vec<Array2<T>> = vec![Array2::zeros((n_au, d_au)); n];

    for i in 0..n {
        let out = &fwd.outputs[i];
        let s = &fwd.samples[i];
        if let Some(gp) = grad_probs {
            d_after[i] += &au_occurrence_backward(
                out.h_a_graph.view(),
                params.anchors.view(),
                gp[i].view(),
                &mut grads.anchors,
            );
        }
        let Some(gl) = grad_logits else { continue };
        if ablation == Ablation::BackboneOnly {
            let dpooled = linear_vec_backward(
                s.pooled_b.view(),
                params.backbone_only.weight.view(),
                gl[i].view(),
                &mut grads.backbone_only.weight,
                &mut grads.backbone_only.bias,
            );
            let p = out.h_b.nrows();
            d_hb[i] += &(dpooled / T::c(p as f64)).insert_axis(Axis(0));
            continue;
        }
        let graph_rep = ablation != Ablation::NoGraphRep;
        let g_in = if graph_rep {
            out.h_g_proj.clone()
        } else {
            Array1::zeros(out.h_g_proj.len())
        };
        let (d_ab, d_gp) = classify_backward(
            out.h_ab.view(),
            g_in.view(),
            &params.classifier,
            gl[i].view(),
            &mut grads.classifier,
        );
        let fg = project_and_fuse_backward(
            s.fusion.as_ref().expect("fusion cache"),
            Projections {
                b: &params.proj_b,
                a: &params.proj_a,
                g: &params.proj_g,
            },
            d_ab.view(),
            graph_rep.then_some(d_gp.view()),
            ProjectionGrads {
                b: &mut grads.proj_b,
                a: &mut grads.proj_a,
                g: &mut grads.proj_g,
            },
        );
        d_hb[i] += &fg.h_b;
        d_after[i] += &fg.nodes;
        if graph_rep {
            d_after[i] += &pool_graph_backward(fg.h_g.view(), n_au);
        }
    }

    let d_nodes = match &fwd.gnn {
        Some(cache) => gnn_backward(cache, &params.gnn, &d_after, &mut grads.gnn),
        None => d_after,
    };

    let mut input_grads = want_input_grad.then(|| Vec::with_capacity(n));
    for i in 0..n {
        let s = &fwd.samples[i];
        d_hb[i] += &au_node_features_backward(
            &s.nodes,
            &params.au_heads,
            d_nodes[i].view(),
            &mut grads.au_heads,
        );
        let dx = backbone_backward(
            &s.backbone,
            &params.backbone,
            d_hb[i].view(),
            &mut grads.backbone,
            want_input_grad,
        );
        if let (Some(v), Some(dx)) = (input_grads.as_mut(), dx) {
            v.push(dx);
        }
    }
    input_grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::Group;

    fn image(seed: usize) -> Array3<f64> {
        Array3::from_shape_fn((96, 96, 3), |(i, j, c)| {
            (((i * 7 + j * 13 + c * 5 + seed * 31) % 17) as f64) / 17.0
        })
    }

    #[test]
    fn full_desk_shapes() {
        let cfg = ModelConfig::desk();
        let p = ModelParams::<f64>::init(&cfg, 3);
        let out = forward(image(0).view(), &p, &cfg, Mode::Eval).unwrap();
        assert_eq!(out.logits.len(), 3);
        assert_eq!(out.probs.len(), 8);
        assert!(out.logits.iter().all(|v| v.is_finite()));
        assert!(out.probs.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn no_gnn_equals_full_with_trivial_graph_layer() {
        let mut cfg = ModelConfig::desk();
        let mut p = ModelParams::<f64>::init(&cfg, 5);
        p.gnn.fc1.weight.fill(0.0);
        p.gnn.fc2.weight.fill(0.0);
        let full = forward(image(1).view(), &p, &cfg, Mode::Eval).unwrap();
        cfg.ablation = Ablation::NoGnn;
        let bare = forward(image(1).view(), &p, &cfg, Mode::Eval).unwrap();
        for (a, b) in full.logits.iter().zip(&bare.logits) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(bare.graph.is_none());
    }

    #[test]
    fn backbone_only_ignores_au_parameters() {
        let mut cfg = ModelConfig::desk();
        cfg.ablation = Ablation::BackboneOnly;
        let mut p = ModelParams::<f64>::init(&cfg, 9);
        let before = forward(image(2).view(), &p, &cfg, Mode::Eval).unwrap();
        p.anchors.mapv_inplace(|v| v * 0.5 + 0.1);
        p.reinit(&[Group::AuHeads, Group::Gnn], 77);
        let after = forward(image(2).view(), &p, &cfg, Mode::Eval).unwrap();
        assert_eq!(before.logits, after.logits);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let cfg = ModelConfig::desk();
        let p = ModelParams::<f32>::init(&cfg, 1);
        let img = image(3).mapv(|v| v as f32);
        let a = forward(img.view(), &p, &cfg, Mode::Eval).unwrap();
        let b = forward(img.view(), &p, &cfg, Mode::Eval).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.probs, b.probs);
    }
}
