//! Weighted cross-entropy for pain categories and weighted BCE for AU
//! occurrence, each with an ε floor inside the logarithms.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Loss value together with its gradient with respect to the inputs.
#[derive(Debug, Clone)]
pub struct LossGrad<T> {
    pub value: T,
    pub grad: Array2<T>,
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows<T: Scalar>(logits: ArrayView2<T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Builds one-hot rows from class indices.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Array2<T>> {
    let mut y = Array2::zeros((labels.len(), classes));
    for (i, &c) in labels.iter().enumerate() {
        if c >= classes {
            return Err(Error::CategoryOutOfRange { index: c, classes });
        }
        y[[i, c]] = T::one();
    }
    Ok(y)
}

fn true_classes<T: Scalar>(labels: ArrayView2<T>) -> Result<Vec<usize>> {
    labels
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| {
            let ones: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != T::zero())
                .map(|(j, _)| j)
                .collect();
            match ones.as_slice() {
                [j] if row[*j] == T::one() => Ok(*j),
                _ => Err(Error::NonOneHotLabel(i)),
            }
        })
        .collect()
}

pub fn weighted_ce_loss<T: Scalar>(
    logits: ArrayView2<T>,
    labels: ArrayView2<T>,
    weights: &[f64],
    eps: f64,
) -> Result<T> {
    Ok(weighted_ce_loss_grad(logits, labels, weights, eps)?.value)
}

/// `−(1/N) Σ_i w_{c_i} log max(p_{i,c_i}, ε)` and its logit gradient.
/// The gradient vanishes for rows where the floor is active.
pub fn weighted_ce_loss_grad<T: Scalar>(
    logits: ArrayView2<T>,
    labels: ArrayView2<T>,
    weights: &[f64],
    eps: f64,
) -> Result<LossGrad<T>> {
    let (n, c) = logits.dim();
    if labels.dim() != (n, c) || weights.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "logits {:?}, labels {:?}, {} weights",
            logits.dim(),
            labels.dim(),
            weights.len()
        )));
    }
    let classes = true_classes(labels)?;
    if n == 0 {
        return Ok(LossGrad {
            value: T::zero(),
            grad: Array2::zeros((0, c)),
        });
    }
    let probs = softmax_rows(logits);
    let inv_n = T::c(1.0 / n as f64);
    let mut value = T::zero();
    let mut grad = Array2::zeros((n, c));
    for (i, &k) in classes.iter().enumerate() {
        let w = T::c(weights[k]);
        let p = probs[[i, k]];
        if p > T::c(eps) {
            value -= w * p.ln();
            let mut g = grad.row_mut(i);
            g.assign(&probs.row(i));
            g[k] -= T::one();
            g *= w * inv_n;
        } else {
            value -= w * T::c(eps).ln();
        }
    }
    Ok(LossGrad {
        value: value * inv_n,
        grad,
    })
}

pub fn au_bce_loss<T: Scalar>(
    probs: ArrayView2<T>,
    bits: ArrayView2<T>,
    pos_weights: &[f64],
    eps: f64,
) -> Result<T> {
    Ok(au_bce_loss_grad(probs, bits, pos_weights, eps)?.value)
}

/// Mean over entries of `−(w_j·b·log max(p, ε) + (1−b)·log max(1−p, ε))`.
pub fn au_bce_loss_grad<T: Scalar>(
    probs: ArrayView2<T>,
    bits: ArrayView2<T>,
    pos_weights: &[f64],
    eps: f64,
) -> Result<LossGrad<T>> {
    let (n, m) = probs.dim();
    if bits.dim() != (n, m) || pos_weights.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "probabilities {:?}, bits {:?}, {} positive weights",
            probs.dim(),
            bits.dim(),
            pos_weights.len()
        )));
    }
    let mut grad = Array2::zeros((n, m));
    if n * m == 0 {
        return Ok(LossGrad {
            value: T::zero(),
            grad,
        });
    }
    let e = T::c(eps);
    let scale = T::c(1.0 / (n * m) as f64);
    let mut value = T::zero();
    for i in 0..n {
        for j in 0..m {
            let p = probs[[i, j]];
            let b = bits[[i, j]];
            let w = T::c(pos_weights[j]);
            let q = T::one() - p;
            value -= w * b * p.max(e).ln() + (T::one() - b) * q.max(e).ln();
            let mut g = T::zero();
            if p > e {
                g -= w * b / p;
            }
            if q > e {
                g += (T::one() - b) / q;
            }
            grad[[i, j]] = g * scale;
        }
    }
    Ok(LossGrad {
        value: value * scale,
        grad,
    })
}

/// Per-AU positive weights `(1 − rate)/rate` over the modeled set; AUs that
/// are always or never active get weight 1.
pub fn au_positive_weights(manifest: &DatasetManifest) -> Vec<f64> {
    let modeled = manifest.modeled_aus();
    let mut on = vec![0usize; modeled.len()];
    for r in manifest.records() {
        for (j, b) in r.occurrence_bits(modeled).into_iter().enumerate() {
            on[j] += b as usize;
        }
    }
    let n = manifest.len();
    on.into_iter()
        .map(|k| {
            if k == 0 || k == n {
                1.0
            } else {
                let rate = k as f64 / n as f64;
                (1.0 - rate) / rate
            }
        })
        .collect()
}

/// Occurrence bits of a batch as a 0/1 matrix.
pub fn bit_matrix<T: Scalar>(rows: &[Vec<bool>]) -> Array2<T> {
    let m = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), m), |(i, j)| {
        if rows[i][j] {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Stacks per-sample vectors into rows.
pub fn stack_rows<T: Scalar>(rows: &[Array1<T>]) -> Array2<T> {
    let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).expect("rows of equal length")
}
