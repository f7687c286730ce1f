use std::collections::HashMap;

use crate::tensor::{ParamId, ParamStore, Scalar, Tensor};

/// Cosine decay from `lr_max` at the first epoch to `lr_min` at the last.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total_epochs <= 1 {
        return lr_max;
    }
    let t = epoch.min(total_epochs - 1) as f64 / (total_epochs - 1) as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Momentum gradient descent. `scale` folds a 1/batch factor into the
/// gradient so callers can accumulate raw per-utterance backward passes.
pub struct Sgd<S: Scalar> {
    momentum: f64,
    velocity: HashMap<ParamId, Tensor<S>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(momentum: f64) -> Self {
        Sgd { momentum, velocity: HashMap::new() }
    }

    pub fn step(&mut self, params: &mut ParamStore<S>, ids: &[ParamId], lr: f64, scale: f64) {
        let (mu, lr, scale) = (S::of(self.momentum), S::of(lr), S::of(scale));
        for &id in ids {
            let g = params.grad(id).clone();
            let v = self.velocity.entry(id).or_insert_with(|| Tensor::zeros(g.shape()));
            let w = params.value_mut(id);
            for ((wi, vi), &gi) in
                w.as_mut_slice().iter_mut().zip(v.as_mut_slice()).zip(g.as_slice())
            {
                *vi = mu * *vi + scale * gi;
                *wi = *wi - lr * *vi;
            }
        }
    }
}

/// Adaptive-moment optimizer used for the architecture scores.
pub struct Adam<S: Scalar> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: HashMap<ParamId, Tensor<S>>,
    v: HashMap<ParamId, Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new() -> Self {
        Adam { beta1: 0.5, beta2: 0.999, eps: 1e-8, t: 0, m: HashMap::new(), v: HashMap::new() }
    }

    pub fn step(&mut self, params: &mut ParamStore<S>, ids: &[ParamId], lr: f64, scale: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let (r1, r2) = (S::of(1.0 - self.beta1), S::of(1.0 - self.beta2));
        let (c1, c2, eps) = (S::of(c1), S::of(c2), S::of(self.eps));
        let (lr, scale) = (S::of(lr), S::of(scale));
        for &id in ids {
            let g = params.grad(id).clone();
            let m = self.m.entry(id).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(id).or_insert_with(|| Tensor::zeros(g.shape()));
            let w = params.value_mut(id);
            for (i, &graw) in g.as_slice().iter().enumerate() {
                let gi = scale * graw;
                let mi = b1 * m.as_slice()[i] + r1 * gi;
                let vi = b2 * v.as_slice()[i] + r2 * gi * gi;
                m.as_mut_slice()[i] = mi;
                v.as_mut_slice()[i] = vi;
                let update = (mi / c1) / ((vi / c2).sqrt() + eps);
                w.as_mut_slice()[i] = w.as_mut_slice()[i] - lr * update;
            }
        }
    }
}

impl<S: Scalar> Default for Adam<S> {
    fn default() -> Self {
        Self::new()
    }
}
