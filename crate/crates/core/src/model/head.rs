//! Pain classifier over the concatenated interaction and graph vectors.

use ndarray::{concatenate, Array1, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::model::ops::{linear_vec, linear_vec_backward};
use crate::model::params::Affine;
use crate::scalar::Scalar;

pub fn classify<T: Scalar>(
    h_ab: ArrayView1<T>,
    h_g_proj: ArrayView1<T>,
    fc: &Affine<T>,
) -> Result<Array1<T>> {
    if h_ab.len() != h_g_proj.len() || fc.weight.ncols() != h_ab.len() * 2 {
        return Err(Error::ShapeMismatch(format!(
            "classifier expects {} inputs, got {} + {}",
            fc.weight.ncols(),
            h_ab.len(),
            h_g_proj.len()
        )));
    }
    let x = concatenate![Axis(0), h_ab, h_g_proj];
    Ok(linear_vec(x.view(), fc.weight.view(), fc.bias.view()))
}

/// Returns (dL/dh_ab, dL/dh_g').
pub fn classify_backward<T: Scalar>(
    h_ab: ArrayView1<T>,
    h_g_proj: ArrayView1<T>,
    fc: &Affine<T>,
    grad_logits: ArrayView1<T>,
    grads: &mut Affine<T>,
) -> (Array1<T>, Array1<T>) {
    let x = concatenate![Axis(0), h_ab, h_g_proj];
    let dx = linear_vec_backward(
        x.view(),
        fc.weight.view(),
        grad_logits,
        &mut grads.weight,
        &mut grads.bias,
    );
    let n = h_ab.len();
    (
        dx.slice(ndarray::s![..n]).to_owned(),
        dx.slice(ndarray::s![n..]).to_owned(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_weight_gives_bias() {
        let mut fc = Affine::<f64>::zeros(3, 4);
        fc.bias = array![0.1, -0.2, 0.3];
        let y = classify(array![1.0, 2.0].view(), array![3.0, 4.0].view(), &fc).unwrap();
        assert_eq!(y, fc.bias);
    }

    #[test]
    fn linear_in_interaction_vector() {
        let fc = Affine {
            weight: array![
                [0.5, -1.0, 2.0, 0.1],
                [1.5, 0.25, -0.5, 0.0],
                [0.0, 1.0, 1.0, 1.0]
            ],
            bias: array![0.3, 0.2, 0.1],
        };
        let g = array![0.7, 1.1];
        let h = array![1.3, -0.4];
        let f = |x: Array1<f64>| classify(x.view(), g.view(), &fc).unwrap();
        let base = f(Array1::zeros(2));
        let lhs = f(&h * 2.0) - &base;
        let rhs = (f(h.clone()) - &base) * 2.0;
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
