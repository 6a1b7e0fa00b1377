use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam over the trainable tensors of a [`ParamSet`]; tensors with
/// `requires_grad == false` are never touched.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (name, t) in params.iter_mut() {
            if !t.requires_grad() {
                continue;
            }
            let Some(g) = t.grad().map(<[f64]>::to_vec) else { continue };
            let (m, v) = self.moments.entry(name.to_string()).or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for (((p, g), m), v) in t.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewbobConfig {
    pub decay: f64,
    /// Minimum absolute dev-loss improvement that keeps the rate.
    pub threshold: f64,
    pub min_lr: f64,
}

impl Default for NewbobConfig {
    fn default() -> Self {
        Self { decay: 0.5, threshold: 0.01, min_lr: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Newbob {
    pub config: NewbobConfig,
    pub lr: f64,
    pub best_dev_loss: f64,
}

impl Newbob {
    pub fn new(initial_lr: f64, config: NewbobConfig) -> Self {
        Self { config, lr: initial_lr, best_dev_loss: f64::INFINITY }
    }

    /// Records one dev loss and returns the rate for the next epoch.
    pub fn step(&mut self, dev_loss: f64) -> f64 {
        if self.best_dev_loss - dev_loss < self.config.threshold {
            self.lr = (self.lr * self.config.decay).max(self.config.min_lr);
        }
        self.best_dev_loss = self.best_dev_loss.min(dev_loss);
        self.lr
    }
}

/// `g ← g + l2·p + N(0, σ²)` per coordinate.
pub fn regularize_grad<R: Rng + ?Sized>(grad: &mut [f64], param: &[f64], l2: f64, noise_std: f64, rng: &mut R) {
    let noise = (noise_std > 0.0).then(|| Normal::new(0.0, noise_std).expect("finite std"));
    for (g, p) in grad.iter_mut().zip(param) {
        *g += l2 * p;
        if let Some(n) = &noise {
            *g += n.sample(rng);
        }
    }
}

/// [`regularize_grad`] over every trainable tensor, allocating zero
/// gradients where none were accumulated. Frozen tensors keep no gradient.
pub fn apply_regularizers<R: Rng + ?Sized>(params: &mut ParamSet, l2: f64, noise_std: f64, rng: &mut R) {
    if l2 == 0.0 && noise_std <= 0.0 {
        return;
    }
    for (_, t) in params.iter_mut() {
        if !t.requires_grad() {
            continue;
        }
        if t.grad().is_none() {
            t.accumulate_grad(&vec![0.0; t.numel()]);
        }
        let values = t.data().to_vec();
        regularize_grad(t.grad_mut().expect("allocated"), &values, l2, noise_std, rng);
    }
}

/// Names frozen by prefix; applied by toggling `requires_grad`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FreezeMask {
    pub prefixes: Vec<String>,
}

impl FreezeMask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn prefixes(prefixes: &[&str]) -> Self {
        Self { prefixes: prefixes.iter().map(|p| p.to_string()).collect() }
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.prefixes.iter().any(|p| name.starts_with(p.as_str()))
    }

    /// Marks every tensor trainable unless it is frozen or `constant(name)`.
    pub fn apply(&self, params: &mut ParamSet, constant: impl Fn(&str) -> bool) {
        for (name, t) in params.iter_mut() {
            t.set_requires_grad(!self.is_frozen(name) && !constant(name));
        }
    }
}
