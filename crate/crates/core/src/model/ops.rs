//! Dense building blocks with explicit backward passes.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis, Zip};

use crate::scalar::Scalar;

pub fn relu<T: Scalar, D: ndarray::Dimension>(x: &ndarray::Array<T, D>) -> ndarray::Array<T, D> {
    x.mapv(|v| v.max(T::zero()))
}

/// Zeroes `grad` where the pre-activation was not positive.
pub fn relu_backward<T: Scalar, D: ndarray::Dimension>(
    grad: &mut ndarray::Array<T, D>,
    pre: &ndarray::Array<T, D>,
) {
    Zip::from(grad).and(pre).for_each(|g, &z| {
        if z <= T::zero() {
            *g = T::zero();
        }
    });
}

/// Row-wise affine map: `x · wᵀ + b` for x (n, in), w (out, in).
pub fn linear_rows<T: Scalar>(x: ArrayView2<T>, w: ArrayView2<T>, b: ArrayView1<T>) -> Array2<T> {
    let mut y = x.dot(&w.t());
    y += &b;
    y
}

/// Accumulates parameter gradients of [`linear_rows`] and returns dx.
pub fn linear_rows_backward<T: Scalar>(
    x: ArrayView2<T>,
    w: ArrayView2<T>,
    grad_out: ArrayView2<T>,
    grad_w: &mut Array2<T>,
    grad_b: &mut Array1<T>,
) -> Array2<T> {
    *grad_w += &grad_out.t().dot(&x);
    *grad_b += &grad_out.sum_axis(Axis(0));
    grad_out.dot(&w)
}

/// Single-vector affine map `w · x + b`.
pub fn linear_vec<T: Scalar>(x: ArrayView1<T>, w: ArrayView2<T>, b: ArrayView1<T>) -> Array1<T> {
    w.dot(&x) + b
}

pub fn linear_vec_backward<T: Scalar>(
    x: ArrayView1<T>,
    w: ArrayView2<T>,
    grad_out: ArrayView1<T>,
    grad_w: &mut Array2<T>,
    grad_b: &mut Array1<T>,
) -> Array1<T> {
    let gw = grad_out
        .view()
        .insert_axis(Axis(1))
        .dot(&x.view().insert_axis(Axis(0)));
    *grad_w += &gw;
    *grad_b += &grad_out;
    w.t().dot(&grad_out)
}

/// Output side of a 3×3, stride-2, padding-1 convolution.
pub fn conv_out_side(side: usize) -> usize {
    side.div_ceil(2)
}

/// Unfolds (C, H, W) into (C·9, Ho·Wo) patches for a 3×3/stride-2/pad-1 kernel.
pub fn im2col<T: Scalar>(x: ArrayView3<T>) -> Array2<T> {
    let (c, h, w) = x.dim();
    let (ho, wo) = (conv_out_side(h), conv_out_side(w));
    let mut cols = Array2::<T>::zeros((c * 9, ho * wo));
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = ci * 9 + ky * 3 + kx;
                let mut dst = cols.row_mut(row);
                for oy in 0..ho {
                    let iy = (oy * 2 + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * 2 + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dst[oy * wo + ox] = x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub fn col2im<T: Scalar>(cols: ArrayView2<T>, c: usize, h: usize, w: usize) -> Array3<T> {
    let (ho, wo) = (conv_out_side(h), conv_out_side(w));
    let mut x = Array3::<T>::zeros((c, h, w));
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let src = cols.row(ci * 9 + ky * 3 + kx);
                for oy in 0..ho {
                    let iy = (oy * 2 + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * 2 + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[[ci, iy as usize, ix as usize]] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
    x
}

/// Batch statistics of a row-batched normalization, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub xhat: Array2<T>,
    pub inv_std: Array1<T>,
}

pub const BN_EPS: f64 = 1e-5;

/// Per-column normalization with batch statistics (biased variance).
pub fn batch_norm_train<T: Scalar>(
    x: ArrayView2<T>,
    gamma: ArrayView1<T>,
    beta: ArrayView1<T>,
) -> (Array2<T>, BatchNormCache<T>, Array1<T>, Array1<T>) {
    let n = T::c(x.nrows() as f64);
    let mean = x.sum_axis(Axis(0)) / n;
    let centered = &x - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
    let inv_std = var.mapv(|v| (v + T::c(BN_EPS)).sqrt().recip());
    let xhat = &centered * &inv_std;
    let y = &xhat * &gamma + beta;
    (y, BatchNormCache { xhat, inv_std }, mean, var)
}

/// Returns dx; accumulates dγ and dβ.
pub fn batch_norm_train_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: ArrayView1<T>,
    grad_out: ArrayView2<T>,
    grad_gamma: &mut Array1<T>,
    grad_beta: &mut Array1<T>,
) -> Array2<T> {
    let n = T::c(cache.xhat.nrows() as f64);
    *grad_beta += &grad_out.sum_axis(Axis(0));
    *grad_gamma += &(&grad_out * &cache.xhat).sum_axis(Axis(0));
    let dxhat = &grad_out * &gamma;
    let sum_d = dxhat.sum_axis(Axis(0));
    let sum_dx = (&dxhat * &cache.xhat).sum_axis(Axis(0));
    let mut dx = dxhat * n - &sum_d - &(&cache.xhat * &sum_dx);
    dx *= &(&cache.inv_std / n);
    dx
}

/// Normalization with frozen statistics: an affine map per column.
pub fn batch_norm_eval<T: Scalar>(
    x: ArrayView2<T>,
    gamma: ArrayView1<T>,
    beta: ArrayView1<T>,
    mean: ArrayView1<T>,
    var: ArrayView1<T>,
) -> (Array2<T>, Array1<T>) {
    let scale = Zip::from(&gamma)
        .and(&var)
        .map_collect(|&g, &v| g / (v + T::c(BN_EPS)).sqrt());
    let y = (&x - &mean) * &scale + beta;
    (y, scale)
}

/// Copies the channels-last image into channels-first layout.
pub fn hwc_to_chw<T: Scalar>(img: ArrayView3<T>) -> Array3<T> {
    img.permuted_axes([2, 0, 1]).as_standard_layout().to_owned()
}

pub fn mean_rows<T: Scalar>(x: ArrayView2<T>) -> Array1<T> {
    x.sum_axis(Axis(0)) / T::c(x.nrows() as f64)
}

/// Column block `[lo, hi)` of a row vector, as an owned copy.
pub fn slice_vec<T: Scalar>(x: ArrayView1<T>, lo: usize, hi: usize) -> Array1<T> {
    x.slice(s![lo..hi]).to_owned()
}

/// Smallest |z| over ReLU pre-activations, for gradient checks that must stay
/// away from kinks.
pub fn min_abs<'a, T: Scalar + 'a>(values: impl IntoIterator<Item = &'a T>) -> f64 {
    values
        .into_iter()
        .map(|v| v.f64().abs())
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};

    #[test]
    fn im2col_adjoint_identity() {
        // <im2col(x), y> == <x, col2im(y)>
        let x = Array::from_shape_fn((2, 5, 6), |(c, i, j)| {
            (c * 31 + i * 7 + j) as f64 * 0.1 - 1.0
        });
        let cols = im2col(x.view());
        let y = Array::from_shape_fn(cols.dim(), |(i, j)| ((i * 13 + j * 5) % 7) as f64 - 3.0);
        let lhs = (&cols * &y).sum();
        let rhs = (&x * &col2im(y.view(), 2, 5, 6)).sum();
        assert!((lhs - rhs).abs() < 1e-9);
        assert_eq!(cols.dim(), (18, 3 * 3));
    }

    #[test]
    fn batch_norm_normalizes_columns() {
        let x: Array2<f64> = array![[1.0, 10.0], [3.0, 10.0], [5.0, 13.0]];
        let g = array![1.0, 2.0];
        let b = array![0.0, 1.0];
        let (y, _, mean, var) = batch_norm_train(x.view(), g.view(), b.view());
        assert!((mean[0] - 3.0).abs() < 1e-12);
        assert!((var[0] - 8.0 / 3.0).abs() < 1e-12);
        assert!(y.column(0).sum().abs() < 1e-9);
        assert!((y.column(1).sum() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn linear_rows_matches_manual() {
        let x = array![[1.0, 2.0], [0.5, -1.0]];
        let w = array![[1.0, 0.0], [2.0, 1.0], [0.0, -1.0]];
        let b = array![0.1, 0.2, 0.3];
        let y = linear_rows(x.view(), w.view(), b.view());
        assert_eq!(y, array![[1.1, 4.2, -1.7], [0.6, 0.2, 1.3]]);
    }
}
