//! AU occurrence probabilities: cosine similarity between each rectified
//! node feature and its rectified anchor.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::model::ops::relu;
use crate::scalar::Scalar;

pub const OCCURRENCE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Occurrence<T> {
    pub probs: Array1<T>,
    pub bits: Vec<bool>,
    /// Set where either rectified vector had zero norm (probability forced to 0).
    pub degenerate: Vec<bool>,
}

pub fn au_occurrence_probs<T: Scalar>(
    nodes: ArrayView2<T>,
    anchors: ArrayView2<T>,
    threshold: f64,
) -> Result<Occurrence<T>> {
    if nodes.dim() != anchors.dim() {
        return Err(Error::ShapeMismatch(format!(
            "node features {:?} vs anchors {:?}",
            nodes.dim(),
            anchors.dim()
        )));
    }
    let n = nodes.nrows();
    let mut probs = Array1::zeros(n);
    let mut degenerate = vec![false; n];
    for i in 0..n {
        match cosine(nodes.row(i), anchors.row(i)) {
            Some(p) => probs[i] = p,
            None => degenerate[i] = true,
        }
    }
    let bits = probs.iter().map(|p: &T| p.f64() >= threshold).collect();
    Ok(Occurrence {
        probs,
        bits,
        degenerate,
    })
}

fn cosine<T: Scalar>(h: ArrayView1<T>, s: ArrayView1<T>) -> Option<T> {
    let u = relu(&h.to_owned());
    let v = relu(&s.to_owned());
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == T::zero() || nv == T::zero() {
        return None;
    }
    // Rounding can push the ratio a hair past 1.
    Some((u.dot(&v) / (nu * nv)).min(T::one()))
}

/// Returns dL/dnodes; accumulates dL/danchors.
pub fn au_occurrence_backward<T: Scalar>(
    nodes: ArrayView2<T>,
    anchors: ArrayView2<T>,
    grad_p: ArrayView1<T>,
    grad_anchors: &mut Array2<T>,
) -> Array2<T> {
    let mut dnodes = Array2::zeros(nodes.dim());
    for i in 0..nodes.nrows() {
        let g = grad_p[i];
        if g == T::zero() {
            continue;
        }
        let (h, s) = (nodes.row(i), anchors.row(i));
        let u = relu(&h.to_owned());
        let v = relu(&s.to_owned());
        let nu = u.dot(&u).sqrt();
        let nv = v.dot(&v).sqrt();
        if nu == T::zero() || nv == T::zero() {
            continue;
        }
        let p = u.dot(&v) / (nu * nv);
        let du = (&v / (nu * nv) - &(&u * (p / (nu * nu)))) * g;
        let dv = (&u / (nu * nv) - &(&v * (p / (nv * nv)))) * g;
        Zip::from(dnodes.row_mut(i))
            .and(&du)
            .and(&h)
            .for_each(|d, &x, &z| *d = if z > T::zero() { x } else { T::zero() });
        Zip::from(grad_anchors.index_axis_mut(Axis(0), i))
            .and(&dv)
            .and(&s)
            .for_each(|d, &x, &z| {
                if z > T::zero() {
                    *d += x;
                }
            });
    }
    dnodes
}
