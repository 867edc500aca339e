//! Graph layer: `H' = ReLU(H + BN(Aᵀ·FC₁(H) + FC₂(H)))`.
//!
//! Normalization runs over all node rows of the batch in training mode and
//! with running statistics in evaluation mode.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::model::graph::AuGraph;
use crate::model::ops::{
    batch_norm_eval, batch_norm_train, batch_norm_train_backward, linear_rows,
    linear_rows_backward, min_abs, relu, relu_backward, BatchNormCache, BN_EPS,
};
use crate::model::params::{BatchNorm, GnnParams};
use crate::model::Mode;
use crate::scalar::Scalar;

/// Fraction of the previous running statistic kept at each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone)]
enum NormPath<T> {
    Batch(BatchNormCache<T>),
    Frozen { xhat: Array2<T>, scale: Array1<T> },
}

#[derive(Debug, Clone)]
pub struct GnnCache<T> {
    inputs: Vec<Array2<T>>,
    adjacency: Vec<Array2<T>>,
    norm: NormPath<T>,
    pre: Array2<T>,
}

impl<T: Scalar> GnnCache<T> {
    pub fn kink_margin(&self) -> f64 {
        min_abs(&self.pre)
    }
}

/// Batch statistics from a training-mode pass.
#[derive(Debug, Clone)]
pub struct NormStats<T> {
    pub mean: Array1<T>,
    pub var: Array1<T>,
    pub rows: usize,
}

/// Updated node features per sample, the backward cache and, in train
/// mode, the batch statistics.
pub type GnnOutput<T> = (Vec<Array2<T>>, GnnCache<T>, Option<NormStats<T>>);

pub fn gnn_forward<T: Scalar>(
    inputs: &[ArrayView2<T>],
    graphs: &[AuGraph],
    params: &GnnParams<T>,
    mode: Mode,
) -> Result<GnnOutput<T>> {
    if inputs.is_empty() || inputs.len() != graphs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} node matrices for {} graphs",
            inputs.len(),
            graphs.len()
        )));
    }
    let (n, d) = inputs[0].dim();
    if d != params.fc1.weight.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "node features have width {d}, graph layer expects {}",
            params.fc1.weight.ncols()
        )));
    }
    let b = inputs.len();
    let mut z = Array2::<T>::zeros((b * n, d));
    let mut adjacency = Vec::with_capacity(b);
    for (i, (h, g)) in inputs.iter().zip(graphs).enumerate() {
        if h.dim() != (n, d) || g.nodes() != n {
            return Err(Error::ShapeMismatch("ragged node batch".into()));
        }
        let a = g.adjacency::<T>();
        let m1 = linear_rows(h.view(), params.fc1.weight.view(), params.fc1.bias.view());
        let m2 = linear_rows(h.view(), params.fc2.weight.view(), params.fc2.bias.view());
        z.slice_mut(s![i * n..(i + 1) * n, ..])
            .assign(&(a.t().dot(&m1) + m2));
        adjacency.push(a);
    }
    let bn = &params.bn;
    let (normed, norm, stats) = match mode {
        Mode::Train => {
            let (y, cache, mean, var) = batch_norm_train(z.view(), bn.gamma.view(), bn.beta.view());
            (
                y,
                NormPath::Batch(cache),
                Some(NormStats {
                    mean,
                    var,
                    rows: b * n,
                }),
            )
        }
        Mode::Eval => {
            let (y, scale) = batch_norm_eval(
                z.view(),
                bn.gamma.view(),
                bn.beta.view(),
                bn.running_mean.view(),
                bn.running_var.view(),
            );
            let inv = bn.running_var.mapv(|v| (v + T::c(BN_EPS)).sqrt().recip());
            let xhat = (&z - &bn.running_mean) * &inv;
            (y, NormPath::Frozen { xhat, scale }, None)
        }
    };
    let mut pre = normed;
    for (i, h) in inputs.iter().enumerate() {
        let mut blk = pre.slice_mut(s![i * n..(i + 1) * n, ..]);
        blk += h;
    }
    let out = relu(&pre);
    let outputs = (0..b)
        .map(|i| out.slice(s![i * n..(i + 1) * n, ..]).to_owned())
        .collect();
    Ok((
        outputs,
        GnnCache {
            inputs: inputs.iter().map(|h| h.to_owned()).collect(),
            adjacency,
            norm,
            pre,
        },
        stats,
    ))
}

/// Returns dL/dH per sample; accumulates parameter gradients.
pub fn gnn_backward<T: Scalar>(
    cache: &GnnCache<T>,
    params: &GnnParams<T>,
    grad_out: &[Array2<T>],
    grads: &mut GnnParams<T>,
) -> Vec<Array2<T>> {
    let n = cache.inputs[0].nrows();
    let mut g = Array2::<T>::zeros(cache.pre.dim());
    for (i, go) in grad_out.iter().enumerate() {
        g.slice_mut(s![i * n..(i + 1) * n, ..]).assign(go);
    }
    relu_backward(&mut g, &cache.pre);
    let dz = match &cache.norm {
        NormPath::Batch(bc) => batch_norm_train_backward(
            bc,
            params.bn.gamma.view(),
            g.view(),
            &mut grads.bn.gamma,
            &mut grads.bn.beta,
        ),
        NormPath::Frozen { xhat, scale } => {
            grads.bn.beta += &g.sum_axis(Axis(0));
            grads.bn.gamma += &(&g * xhat).sum_axis(Axis(0));
            &g * scale
        }
    };
    let mut out = Vec::with_capacity(cache.inputs.len());
    for (i, h) in cache.inputs.iter().enumerate() {
        let dz_i = dz.slice(s![i * n..(i + 1) * n, ..]);
        let dm1 = cache.adjacency[i].dot(&dz_i);
        let mut dh = g.slice(s![i * n..(i + 1) * n, ..]).to_owned();
        dh += &linear_rows_backward(
            h.view(),
            params.fc1.weight.view(),
            dm1.view(),
            &mut grads.fc1.weight,
            &mut grads.fc1.bias,
        );
        dh += &linear_rows_backward(
            h.view(),
            params.fc2.weight.view(),
            dz_i,
            &mut grads.fc2.weight,
            &mut grads.fc2.bias,
        );
        out.push(dh);
    }
    out
}

/// Folds batch statistics into the running averages (unbiased variance).
pub fn update_running_stats<T: Scalar>(bn: &mut BatchNorm<T>, stats: &NormStats<T>) {
    let keep = T::c(BN_MOMENTUM);
    let take = T::one() - keep;
    let correction = if stats.rows > 1 {
        T::c(stats.rows as f64 / (stats.rows - 1) as f64)
    } else {
        T::one()
    };
    bn.running_mean = &bn.running_mean * keep + &stats.mean * take;
    bn.running_var = &bn.running_var * keep + &(&stats.var * correction) * take;
}
