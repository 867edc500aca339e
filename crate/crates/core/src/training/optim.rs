//! Adam with classical L2 weight decay folded into the gradient.

use crate::model::params::{Group, ModelParams};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

pub struct Adam<T> {
    cfg: AdamConfig,
    m: ModelParams<T>,
    v: ModelParams<T>,
    t: u32,
    groups: Vec<Group>,
}

impl<T: Scalar> Adam<T> {
    /// Optimizes only the trainable tensors of `groups`.
    pub fn new(cfg: AdamConfig, like: &ModelParams<T>, groups: &[Group]) -> Self {
        Self {
            cfg,
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
            groups: groups.to_vec(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) {
        self.t += 1;
        let c = self.cfg;
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let bc1 = T::c(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::c(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps, wd) = (T::c(c.lr), T::c(c.eps), T::c(c.weight_decay));
        let grads = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            if !p.trainable || !self.groups.contains(&p.group) {
                continue;
            }
            let (mut p, mut m, mut v) = (p.data, m.data, v.data);
            ndarray::Zip::from(&mut p)
                .and(&g.data)
                .and(&mut m)
                .and(&mut v)
                .for_each(|w, &g, m, v| {
                    let g = g + wd * *w;
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}
