//! Initial AU node features: one affine head per AU on the position-averaged
//! backbone feature, then ReLU.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::model::ops::{mean_rows, min_abs, relu, relu_backward};
use crate::model::params::AuHeads;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct NodeCache<T> {
    pub pooled: Array1<T>,
    pre: Array2<T>,
    positions: usize,
}

impl<T: Scalar> NodeCache<T> {
    pub fn kink_margin(&self) -> f64 {
        min_abs(&self.pre)
    }
}

pub fn au_node_features<T: Scalar>(
    fmap: ArrayView2<T>,
    heads: &AuHeads<T>,
) -> Result<(Array2<T>, NodeCache<T>)> {
    let (n, d_au, d) = heads.weight.dim();
    if fmap.ncols() != d || fmap.nrows() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "feature map {:?} vs AU heads expecting {d} channels",
            fmap.dim()
        )));
    }
    let pooled = mean_rows(fmap);
    let mut pre = Array2::<T>::zeros((n, d_au));
    for (i, mut row) in pre.axis_iter_mut(Axis(0)).enumerate() {
        row.assign(&(heads.weight.index_axis(Axis(0), i).dot(&pooled) + heads.bias.row(i)));
    }
    let h = relu(&pre);
    Ok((
        h,
        NodeCache {
            pooled,
            pre,
            positions: fmap.nrows(),
        },
    ))
}

/// Returns dL/dfmap (P×D); accumulates head gradients.
pub fn au_node_features_backward<T: Scalar>(
    cache: &NodeCache<T>,
    heads: &AuHeads<T>,
    grad_h: ArrayView2<T>,
    grads: &mut AuHeads<T>,
) -> Array2<T> {
    let mut g = grad_h.to_owned();
    relu_backward(&mut g, &cache.pre);
    let d = heads.weight.dim().2;
    let mut dpooled = Array1::<T>::zeros(d);
    for i in 0..g.nrows() {
        let gi = g.row(i);
        let gw = gi
            .insert_axis(Axis(1))
            .dot(&cache.pooled.view().insert_axis(Axis(0)));
        let mut dst = grads.weight.index_axis_mut(Axis(0), i);
        dst += &gw;
        let mut db = grads.bias.row_mut(i);
        db += &gi;
        dpooled += &heads.weight.index_axis(Axis(0), i).t().dot(&gi);
    }
    dpooled /= T::c(cache.positions as f64);
    dpooled
        .insert_axis(Axis(0))
        .broadcast((cache.positions, d))
        .expect("broadcast rows")
        .to_owned()
}
