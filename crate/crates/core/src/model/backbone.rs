//! Full-face representation: a stride-2 convolution stack producing one
//! feature row per spatial position.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::model::config::BackboneSpec;
use crate::model::ops::{col2im, conv_out_side, hwc_to_chw, im2col, min_abs, relu, relu_backward};
use crate::model::params::Conv;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct BackboneCache<T> {
    input_dims: Vec<(usize, usize, usize)>,
    cols: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
}

impl<T: Scalar> BackboneCache<T> {
    pub fn kink_margin(&self) -> f64 {
        min_abs(self.pre.iter().flatten())
    }
}

fn check_image<T>(image: &ArrayView3<T>, spec: &BackboneSpec) -> Result<()> {
    let (h, w, c) = image.dim();
    if h != spec.input_side || w != spec.input_side || c != 3 {
        return Err(Error::ShapeMismatch(format!(
            "image is {h}x{w}x{c}, backbone expects {0}x{0}x3",
            spec.input_side
        )));
    }
    Ok(())
}

/// Maps an HWC image to the P×D feature map.
pub fn backbone_forward<T: Scalar>(
    image: ArrayView3<T>,
    layers: &[Conv<T>],
    spec: &BackboneSpec,
) -> Result<(Array2<T>, BackboneCache<T>)> {
    check_image(&image, spec)?;
    let mut x: Array3<T> = hwc_to_chw(image);
    let mut cache = BackboneCache {
        input_dims: Vec::with_capacity(layers.len()),
        cols: Vec::with_capacity(layers.len()),
        pre: Vec::with_capacity(layers.len()),
    };
    for conv in layers {
        let (c, h, w) = x.dim();
        let cols = im2col(x.view());
        let mut pre = conv.weight.dot(&cols);
        pre += &conv.bias.view().insert_axis(Axis(1));
        let act = relu(&pre);
        x = act
            .into_shape_with_order((conv.weight.nrows(), conv_out_side(h), conv_out_side(w)))
            .expect("contiguous conv output");
        cache.input_dims.push((c, h, w));
        cache.cols.push(cols);
        cache.pre.push(pre);
    }
    let (d, gh, gw) = x.dim();
    let fmap = x
        .into_shape_with_order((d, gh * gw))
        .expect("contiguous")
        .reversed_axes()
        .as_standard_layout()
        .to_owned();
    Ok((fmap, cache))
}

/// Backpropagates dL/dh_b into `grads`; returns dL/dimage (HWC) when asked.
pub fn backbone_backward<T: Scalar>(
    cache: &BackboneCache<T>,
    layers: &[Conv<T>],
    grad_fmap: ArrayView2<T>,
    grads: &mut [Conv<T>],
    want_input_grad: bool,
) -> Option<Array3<T>> {
    // (P, D) -> (D, P)
    let mut g: Array2<T> = grad_fmap.t().as_standard_layout().to_owned();
    for i in (0..layers.len()).rev() {
        relu_backward(&mut g, &cache.pre[i]);
        grads[i].weight += &g.dot(&cache.cols[i].t());
        grads[i].bias += &g.sum_axis(Axis(1));
        if i == 0 && !want_input_grad {
            return None;
        }
        let dcols = layers[i].weight.t().dot(&g);
        let (c, h, w) = cache.input_dims[i];
        let dx = col2im(dcols.view(), c, h, w);
        if i == 0 {
            return Some(dx.permuted_axes([1, 2, 0]).as_standard_layout().to_owned());
        }
        g = dx.into_shape_with_order((c, h * w)).expect("contiguous");
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use crate::model::params::ModelParams;

    #[test]
    fn desk_output_shape() {
        let mut cfg = ModelConfig::desk();
        cfg.backbone = BackboneSpec::desk(64);
        let p = ModelParams::<f32>::init(&cfg, 0);
        let img = Array3::<f32>::from_elem((96, 96, 3), 0.5);
        let (fmap, _) = backbone_forward(img.view(), &p.backbone, &cfg.backbone).unwrap();
        assert_eq!(fmap.dim(), (36, 64));
    }

    #[test]
    fn zero_final_layer_gives_bias_rows() {
        let cfg = ModelConfig::desk();
        let mut p = ModelParams::<f64>::init(&cfg, 0);
        let last = p.backbone.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias
            .iter_mut()
            .enumerate()
            .for_each(|(i, b)| *b = i as f64 * 0.01);
        let img = Array3::<f64>::zeros((96, 96, 3));
        let (fmap, _) = backbone_forward(img.view(), &p.backbone, &cfg.backbone).unwrap();
        for row in fmap.rows() {
            for (i, v) in row.iter().enumerate() {
                assert_eq!(*v, i as f64 * 0.01);
            }
        }
    }

    #[test]
    fn wrong_side_rejected() {
        let cfg = ModelConfig::desk();
        let p = ModelParams::<f32>::init(&cfg, 0);
        let img = Array3::<f32>::zeros((64, 64, 3));
        assert!(matches!(
            backbone_forward(img.view(), &p.backbone, &cfg.backbone),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
