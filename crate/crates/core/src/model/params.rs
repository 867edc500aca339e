//! Learnable state of the network and its canonical tensor names.

use ndarray::{Array1, Array2, Array3, ArrayD, ArrayViewD, ArrayViewMutD, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::config::ModelConfig;
use crate::scalar::Scalar;
use crate::seeding::derive_rng;

/// 3×3 kernel flattened to (out, in·9) for im2col products.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    /// (out, in)
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Affine<T> {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

/// One affine map D → d_AU per AU.
#[derive(Debug, Clone, PartialEq)]
pub struct AuHeads<T> {
    /// (n_AU, d_AU, D)
    pub weight: Array3<T>,
    /// (n_AU, d_AU)
    pub bias: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams<T> {
    pub fc1: Affine<T>,
    pub fc2: Affine<T>,
    pub bn: BatchNorm<T>,
}

/// Parameter groups, used to freeze, transfer or reinitialize parts of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Backbone,
    AuHeads,
    Gnn,
    Anchors,
    Projections,
    Classifier,
    BackboneOnlyHead,
}

impl Group {
    pub const ALL: [Group; 7] = [
        Group::Backbone,
        Group::AuHeads,
        Group::Gnn,
        Group::Anchors,
        Group::Projections,
        Group::Classifier,
        Group::BackboneOnlyHead,
    ];
    /// Backbone and AU representation learning modules.
    pub const REPRESENTATION: [Group; 4] =
        [Group::Backbone, Group::AuHeads, Group::Gnn, Group::Anchors];
    /// Pain classification module.
    pub const PAIN_HEAD: [Group; 3] = [
        Group::Projections,
        Group::Classifier,
        Group::BackboneOnlyHead,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub backbone: Vec<Conv<T>>,
    pub au_heads: AuHeads<T>,
    pub gnn: GnnParams<T>,
    /// Learnable occurrence anchors, one row per AU.
    pub anchors: Array2<T>,
    pub proj_b: Affine<T>,
    pub proj_a: Affine<T>,
    pub proj_g: Affine<T>,
    pub classifier: Affine<T>,
    pub backbone_only: Affine<T>,
}

pub struct TensorMut<'a, T> {
    pub name: String,
    pub group: Group,
    pub trainable: bool,
    pub data: ArrayViewMutD<'a, T>,
}

pub struct TensorRef<'a, T> {
    pub name: String,
    pub group: Group,
    pub trainable: bool,
    pub data: ArrayViewD<'a, T>,
}

/// Conv weights are exposed with their logical (out, in, 3, 3) shape.
fn conv_shape<T>(w: &Array2<T>) -> IxDyn {
    IxDyn(&[w.nrows(), w.ncols() / 9, 3, 3])
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.channels();
        let backbone = (0..cfg.backbone.channels.len())
            .map(|i| Conv {
                weight: Array2::zeros((cfg.backbone.channels[i], cfg.backbone.channels_in(i) * 9)),
                bias: Array1::zeros(cfg.backbone.channels[i]),
            })
            .collect();
        Self {
            backbone,
            au_heads: AuHeads {
                weight: Array3::zeros((cfg.n_au, cfg.d_au, d)),
                bias: Array2::zeros((cfg.n_au, cfg.d_au)),
            },
            gnn: GnnParams {
                fc1: Affine::zeros(cfg.d_au, cfg.d_au),
                fc2: Affine::zeros(cfg.d_au, cfg.d_au),
                bn: BatchNorm {
                    gamma: Array1::zeros(cfg.d_au),
                    beta: Array1::zeros(cfg.d_au),
                    running_mean: Array1::zeros(cfg.d_au),
                    running_var: Array1::zeros(cfg.d_au),
                },
            },
            anchors: Array2::zeros((cfg.n_au, cfg.d_au)),
            proj_b: Affine::zeros(cfg.proj_dim, d),
            proj_a: Affine::zeros(cfg.proj_dim, cfg.d_au),
            proj_g: Affine::zeros(cfg.proj_dim, cfg.d_au),
            classifier: Affine::zeros(cfg.d_pain, 2 * cfg.proj_dim),
            backbone_only: Affine::zeros(cfg.d_pain, d),
        }
    }

    /// Seeded initialization. Every tensor draws from its own stream keyed by
    /// its canonical name, so re-initializing one group leaves the others' values
    /// unchanged.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut p = Self::zeros(cfg);
        p.reinit(&Group::ALL, seed);
        p
    }

    pub fn reinit(&mut self, groups: &[Group], seed: u64) {
        for t in self.tensors_mut() {
            if !groups.contains(&t.group) {
                continue;
            }
            let mut data = t.data;
            let name = t.name;
            let mut rng = derive_rng(seed, &["init", &name]);
            if name.starts_with("au_occurrence.anchors") {
                // nonnegative unit rows keep the cosine well defined from step 0
                for mut row in data.rows_mut() {
                    let v: Vec<f64> = (0..row.len())
                        .map(|_| rng.sample::<f64, _>(StandardNormal).abs())
                        .collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    for (dst, x) in row.iter_mut().zip(v) {
                        *dst = T::c(x / norm);
                    }
                }
            } else if name.ends_with(".running_var") || name == "gnn.bn.weight" {
                data.fill(T::one());
            } else if name.ends_with(".bias") || name.ends_with(".running_mean") {
                data.fill(T::zero());
            } else {
                let shape = data.shape().to_vec();
                // fan-in: every axis except the output axis (and the AU axis for heads)
                let fan_in: usize = if name.starts_with("au_heads") {
                    shape[2]
                } else {
                    shape[1..].iter().product()
                };
                // He-uniform ahead of ReLU, LeCun-uniform for the classifier
                let gain = if name.starts_with("classifier") || name.starts_with("backbone_only") {
                    3.0
                } else {
                    6.0
                };
                let bound = (gain / fan_in as f64).sqrt();
                data.mapv_inplace(|_| T::c(rng.random_range(-bound..bound)));
            }
        }
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = Vec::new();
        let mut push = |name: String, group: Group, trainable: bool, data| {
            out.push(TensorRef {
                name,
                group,
                trainable,
                data,
            })
        };
        for (i, c) in self.backbone.iter().enumerate() {
            push(
                format!("backbone.conv{i}.weight"),
                Group::Backbone,
                true,
                c.weight
                    .view()
                    .into_shape_with_order(conv_shape(&c.weight))
                    .expect("contiguous"),
            );
            push(
                format!("backbone.conv{i}.bias"),
                Group::Backbone,
                true,
                c.bias.view().into_dyn(),
            );
        }
        push(
            "au_heads.fc.weight".into(),
            Group::AuHeads,
            true,
            self.au_heads.weight.view().into_dyn(),
        );
        push(
            "au_heads.fc.bias".into(),
            Group::AuHeads,
            true,
            self.au_heads.bias.view().into_dyn(),
        );
        let g = &self.gnn;
        push(
            "gnn.fc1.weight".into(),
            Group::Gnn,
            true,
            g.fc1.weight.view().into_dyn(),
        );
        push(
            "gnn.fc1.bias".into(),
            Group::Gnn,
            true,
            g.fc1.bias.view().into_dyn(),
        );
        push(
            "gnn.fc2.weight".into(),
            Group::Gnn,
            true,
            g.fc2.weight.view().into_dyn(),
        );
        push(
            "gnn.fc2.bias".into(),
            Group::Gnn,
            true,
            g.fc2.bias.view().into_dyn(),
        );
        push(
            "gnn.bn.weight".into(),
            Group::Gnn,
            true,
            g.bn.gamma.view().into_dyn(),
        );
        push(
            "gnn.bn.bias".into(),
            Group::Gnn,
            true,
            g.bn.beta.view().into_dyn(),
        );
        push(
            "gnn.bn.running_mean".into(),
            Group::Gnn,
            false,
            g.bn.running_mean.view().into_dyn(),
        );
        push(
            "gnn.bn.running_var".into(),
            Group::Gnn,
            false,
            g.bn.running_var.view().into_dyn(),
        );
        push(
            "au_occurrence.anchors".into(),
            Group::Anchors,
            true,
            self.anchors.view().into_dyn(),
        );
        for (name, a) in [
            ("proj_b", &self.proj_b),
            ("proj_a", &self.proj_a),
            ("proj_g", &self.proj_g),
        ] {
            push(
                format!("fusion.{name}.weight"),
                Group::Projections,
                true,
                a.weight.view().into_dyn(),
            );
            push(
                format!("fusion.{name}.bias"),
                Group::Projections,
                true,
                a.bias.view().into_dyn(),
            );
        }
        push(
            "classifier.fc.weight".into(),
            Group::Classifier,
            true,
            self.classifier.weight.view().into_dyn(),
        );
        push(
            "classifier.fc.bias".into(),
            Group::Classifier,
            true,
            self.classifier.bias.view().into_dyn(),
        );
        push(
            "backbone_only.fc.weight".into(),
            Group::BackboneOnlyHead,
            true,
            self.backbone_only.weight.view().into_dyn(),
        );
        push(
            "backbone_only.fc.bias".into(),
            Group::BackboneOnlyHead,
            true,
            self.backbone_only.bias.view().into_dyn(),
        );
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let mut out = Vec::new();
        let mut push = |name: String, group: Group, trainable: bool, data| {
            out.push(TensorMut {
                name,
                group,
                trainable,
                data,
            })
        };
        for (i, c) in self.backbone.iter_mut().enumerate() {
            let shape = conv_shape(&c.weight);
            push(
                format!("backbone.conv{i}.weight"),
                Group::Backbone,
                true,
                c.weight
                    .view_mut()
                    .into_shape_with_order(shape)
                    .expect("contiguous"),
            );
            push(
                format!("backbone.conv{i}.bias"),
                Group::Backbone,
                true,
                c.bias.view_mut().into_dyn(),
            );
        }
        push(
            "au_heads.fc.weight".into(),
            Group::AuHeads,
            true,
            self.au_heads.weight.view_mut().into_dyn(),
        );
        push(
            "au_heads.fc.bias".into(),
            Group::AuHeads,
            true,
            self.au_heads.bias.view_mut().into_dyn(),
        );
        let g = &mut self.gnn;
        push(
            "gnn.fc1.weight".into(),
            Group::Gnn,
            true,
            g.fc1.weight.view_mut().into_dyn(),
        );
        push(
            "gnn.fc1.bias".into(),
            Group::Gnn,
            true,
            g.fc1.bias.view_mut().into_dyn(),
        );
        push(
            "gnn.fc2.weight".into(),
            Group::Gnn,
            true,
            g.fc2.weight.view_mut().into_dyn(),
        );
        push(
            "gnn.fc2.bias".into(),
            Group::Gnn,
            true,
            g.fc2.bias.view_mut().into_dyn(),
        );
        push(
            "gnn.bn.weight".into(),
            Group::Gnn,
            true,
            g.bn.gamma.view_mut().into_dyn(),
        );
        push(
            "gnn.bn.bias".into(),
            Group::Gnn,
            true,
            g.bn.beta.view_mut().into_dyn(),
        );
        push(
            "gnn.bn.running_mean".into(),
            Group::Gnn,
            false,
            g.bn.running_mean.view_mut().into_dyn(),
        );
        push(
            "gnn.bn.running_var".into(),
            Group::Gnn,
            false,
            g.bn.running_var.view_mut().into_dyn(),
        );
        push(
            "au_occurrence.anchors".into(),
            Group::Anchors,
            true,
            self.anchors.view_mut().into_dyn(),
        );
        for (name, a) in [
            ("proj_b", &mut self.proj_b),
            ("proj_a", &mut self.proj_a),
            ("proj_g", &mut self.proj_g),
        ] {
            push(
                format!("fusion.{name}.weight"),
                Group::Projections,
                true,
                a.weight.view_mut().into_dyn(),
            );
            push(
                format!("fusion.{name}.bias"),
                Group::Projections,
                true,
                a.bias.view_mut().into_dyn(),
            );
        }
        push(
            "classifier.fc.weight".into(),
            Group::Classifier,
            true,
            self.classifier.weight.view_mut().into_dyn(),
        );
        push(
            "classifier.fc.bias".into(),
            Group::Classifier,
            true,
            self.classifier.bias.view_mut().into_dyn(),
        );
        push(
            "backbone_only.fc.weight".into(),
            Group::BackboneOnlyHead,
            true,
            self.backbone_only.weight.view_mut().into_dyn(),
        );
        push(
            "backbone_only.fc.bias".into(),
            Group::BackboneOnlyHead,
            true,
            self.backbone_only.bias.view_mut().into_dyn(),
        );
        out
    }

    /// Copies every tensor of the listed groups from `other` (shapes must match).
    pub fn copy_groups_from(&mut self, other: &ModelParams<T>, groups: &[Group]) {
        let src = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            if groups.contains(&dst.group) {
                let mut d = dst.data;
                d.assign(&src.data);
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros_like_shapes(self);
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            let mut d = dst.data;
            d.zip_mut_with(&src.data, |a, &b| *a = U::c(b.f64()));
        }
        out
    }

    fn zeros_like_shapes<S: Scalar>(other: &ModelParams<S>) -> Self {
        let aff = |a: &Affine<S>| Affine::<T>::zeros(a.weight.nrows(), a.weight.ncols());
        let vec = |a: &Array1<S>| Array1::<T>::zeros(a.len());
        Self {
            backbone: other
                .backbone
                .iter()
                .map(|c| Conv {
                    weight: Array2::zeros(c.weight.dim()),
                    bias: Array1::zeros(c.bias.len()),
                })
                .collect(),
            au_heads: AuHeads {
                weight: Array3::zeros(other.au_heads.weight.dim()),
                bias: Array2::zeros(other.au_heads.bias.dim()),
            },
            gnn: GnnParams {
                fc1: aff(&other.gnn.fc1),
                fc2: aff(&other.gnn.fc2),
                bn: BatchNorm {
                    gamma: vec(&other.gnn.bn.gamma),
                    beta: vec(&other.gnn.bn.beta),
                    running_mean: vec(&other.gnn.bn.running_mean),
                    running_var: vec(&other.gnn.bn.running_var),
                },
            },
            anchors: Array2::zeros(other.anchors.dim()),
            proj_b: aff(&other.proj_b),
            proj_a: aff(&other.proj_a),
            proj_g: aff(&other.proj_g),
            classifier: aff(&other.classifier),
            backbone_only: aff(&other.backbone_only),
        }
    }

    /// Zero-filled copy with identical shapes (gradient buffer).
    pub fn zeros_like(&self) -> Self {
        Self::zeros_like_shapes(self)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn num_trainable(&self) -> usize {
        self.tensors()
            .iter()
            .filter(|t| t.trainable)
            .map(|t| t.data.len())
            .sum()
    }

    /// Names and logical shapes, in canonical order.
    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.tensors()
            .into_iter()
            .map(|t| (t.name, t.data.shape().to_vec()))
            .collect()
    }

    pub fn to_named_arrays(&self) -> Vec<(String, ArrayD<T>)> {
        self.tensors()
            .into_iter()
            .map(|t| (t.name, t.data.to_owned()))
            .collect()
    }
}
