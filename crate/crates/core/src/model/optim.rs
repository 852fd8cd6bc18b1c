use serde::{Deserialize, Serialize};

use super::Model;
use crate::scalar::Scalar;

/// `lr_min + (lr_base - lr_min) * (1 + cos(pi * t / horizon)) / 2`.
pub fn cosine_lr(t: usize, horizon: usize, lr_base: f64, lr_min: f64) -> f64 {
    if horizon == 0 {
        return lr_base;
    }
    let frac = t.min(horizon) as f64 / horizon as f64;
    lr_min + 0.5 * (lr_base - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Adam with decoupled weight decay. The decay `p <- p * (1 - lr * wd)` is
/// applied before the moment update, so a zero gradient on fresh moments
/// changes parameters by the decay factor alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(num_params: usize, weight_decay: f64) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: vec![T::zero(); num_params], v: vec![T::zero(); num_params] }
    }

    pub fn update(&mut self, model: &mut Model<T>, grad: &Model<T>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let one = T::one();
        let c1 = T::lit(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::lit(1.0 - self.beta2.powi(self.step as i32));
        let decay = T::lit(1.0 - lr * self.weight_decay);
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for (((p, &g), m), v) in model.params_mut().zip(grad.params()).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *p *= decay;
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
