//! Graph pooling and the fusion of AU, image and graph representations.
//!
//! `h_a` is the node mean, `h_g` the node sum. The AU projection has one
//! entry per backbone position, so `h_ab = ReLU(h_a'ᵀ · h_b')` contracts
//! over positions.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::model::ops::{
    linear_rows, linear_rows_backward, linear_vec, linear_vec_backward, mean_rows, min_abs, relu,
    relu_backward,
};
use crate::model::params::Affine;
use crate::scalar::Scalar;

/// Column-wise sum over nodes.
pub fn pool_graph<T: Scalar>(nodes: ArrayView2<T>) -> Array1<T> {
    nodes.sum_axis(Axis(0))
}

/// Parameters of the three projections.
#[derive(Debug, Clone, Copy)]
pub struct Projections<'a, T> {
    pub b: &'a Affine<T>,
    pub a: &'a Affine<T>,
    pub g: &'a Affine<T>,
}

#[derive(Debug, Clone)]
pub struct Fused<T> {
    pub h_ab: Array1<T>,
    pub h_g_proj: Array1<T>,
}

#[derive(Debug, Clone)]
pub struct FusionCache<T> {
    h_b: Array2<T>,
    h_a: Array1<T>,
    h_g: Array1<T>,
    nodes: usize,
    pre_b: Array2<T>,
    pre_a: Array1<T>,
    pre_g: Array1<T>,
    b_proj: Array2<T>,
    a_proj: Array1<T>,
    pre_ab: Array1<T>,
}

impl<T: Scalar> FusionCache<T> {
    pub fn kink_margin(&self) -> f64 {
        min_abs(
            self.pre_a
                .iter()
                .chain(&self.pre_b)
                .chain(&self.pre_g)
                .chain(&self.pre_ab),
        )
    }
}

pub struct FusionGrads<T> {
    pub h_b: Array2<T>,
    pub nodes: Array2<T>,
    pub h_g: Array1<T>,
}

pub fn project_and_fuse<T: Scalar>(
    h_b: ArrayView2<T>,
    nodes: ArrayView2<T>,
    h_g: ArrayView1<T>,
    proj: Projections<'_, T>,
) -> Result<(Fused<T>, FusionCache<T>)> {
    let (p, d) = h_b.dim();
    let proj_dim = proj.b.weight.nrows();
    if proj.b.weight.ncols() != d
        || proj.a.weight.nrows() != p
        || proj.a.weight.ncols() != nodes.ncols()
        || proj.g.weight.ncols() != h_g.len()
        || proj.g.weight.nrows() != proj_dim
        || nodes.nrows() == 0
    {
        return Err(Error::ShapeMismatch(format!(
            "fusion inputs h_b {:?}, nodes {:?}, h_g {} do not fit projections",
            h_b.dim(),
            nodes.dim(),
            h_g.len()
        )));
    }
    let h_a = mean_rows(nodes);
    let pre_a = linear_vec(h_a.view(), proj.a.weight.view(), proj.a.bias.view());
    let a_proj = relu(&pre_a);
    let pre_b = linear_rows(h_b, proj.b.weight.view(), proj.b.bias.view());
    let b_proj = relu(&pre_b);
    let pre_g = linear_vec(h_g, proj.g.weight.view(), proj.g.bias.view());
    let h_g_proj = relu(&pre_g);
    let pre_ab = a_proj.dot(&b_proj);
    let h_ab = relu(&pre_ab);
    Ok((
        Fused { h_ab, h_g_proj },
        FusionCache {
            h_b: h_b.to_owned(),
            h_a,
            h_g: h_g.to_owned(),
            nodes: nodes.nrows(),
            pre_b,
            pre_a,
            pre_g,
            b_proj,
            a_proj,
            pre_ab,
        },
    ))
}

pub struct ProjectionGrads<'a, T> {
    pub b: &'a mut Affine<T>,
    pub a: &'a mut Affine<T>,
    pub g: &'a mut Affine<T>,
}

/// Backpropagates through fusion. `grad_g_proj` is absent when the graph
/// embedding is not consumed downstream.
pub fn project_and_fuse_backward<T: Scalar>(
    cache: &FusionCache<T>,
    proj: Projections<'_, T>,
    grad_ab: ArrayView1<T>,
    grad_g_proj: Option<ArrayView1<T>>,
    grads: ProjectionGrads<'_, T>,
) -> FusionGrads<T> {
    let mut d_ab = grad_ab.to_owned();
    relu_backward(&mut d_ab, &cache.pre_ab);
    // pre_ab[k] = Σ_p a'[p]·B'[p,k]
    let mut d_a = cache.b_proj.dot(&d_ab);
    let mut d_b = cache
        .a_proj
        .view()
        .insert_axis(Axis(1))
        .dot(&d_ab.view().insert_axis(Axis(0)));
    relu_backward(&mut d_a, &cache.pre_a);
    relu_backward(&mut d_b, &cache.pre_b);
    let dh_a = linear_vec_backward(
        cache.h_a.view(),
        proj.a.weight.view(),
        d_a.view(),
        &mut grads.a.weight,
        &mut grads.a.bias,
    );
    let dh_b = linear_rows_backward(
        cache.h_b.view(),
        proj.b.weight.view(),
        d_b.view(),
        &mut grads.b.weight,
        &mut grads.b.bias,
    );
    let dh_g = match grad_g_proj {
        Some(g) => {
            let mut d_g = g.to_owned();
            relu_backward(&mut d_g, &cache.pre_g);
            linear_vec_backward(
                cache.h_g.view(),
                proj.g.weight.view(),
                d_g.view(),
                &mut grads.g.weight,
                &mut grads.g.bias,
            )
        }
        None => Array1::zeros(cache.h_g.len()),
    };
    let per_node = dh_a / T::c(cache.nodes as f64);
    let nodes = per_node
        .insert_axis(Axis(0))
        .broadcast((cache.nodes, cache.h_a.len()))
        .expect("broadcast rows")
        .to_owned();
    FusionGrads {
        h_b: dh_b,
        nodes,
        h_g: dh_g,
    }
}

/// Backward of [`pool_graph`]: every node receives the pooled gradient.
pub fn pool_graph_backward<T: Scalar>(grad: ArrayView1<T>, nodes: usize) -> Array2<T> {
    grad.insert_axis(Axis(0))
        .broadcast((nodes, grad.len()))
        .expect("broadcast rows")
        .to_owned()
}
