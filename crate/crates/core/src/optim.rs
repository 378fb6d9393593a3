//! Adaptive-moment optimizer with decoupled weight decay.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamWConfig {
            lr,
            ..Default::default()
        }
    }
}

struct Slot<S: Scalar> {
    name: String,
    param: Tensor<S>,
    lr: S,
    m: Vec<S>,
    v: Vec<S>,
}

/// Optimizer state: one moment pair per registered parameter, a shared step
/// counter, and per-group learning rates.
pub struct AdamW<S: Scalar = f64> {
    config: AdamWConfig,
    slots: Vec<Slot<S>>,
    step: u64,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            slots: Vec::new(),
            step: 0,
        }
    }

    /// Registers parameters at the default learning rate.
    pub fn with_params(config: AdamWConfig, params: Vec<(String, Tensor<S>)>) -> Self {
        let mut opt = Self::new(config);
        opt.add_group(params, config.lr);
        opt
    }

    /// Registers a parameter group with its own learning rate.
    pub fn add_group(&mut self, params: Vec<(String, Tensor<S>)>, lr: f64) {
        for (name, param) in params {
            let n = param.numel();
            self.slots.push(Slot {
                name,
                param,
                lr: S::lit(lr),
                m: vec![S::zero(); n],
                v: vec![S::zero(); n],
            });
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Scales every learning rate by `factor`.
    pub fn scale_lr(&mut self, factor: f64) {
        for s in &mut self.slots {
            s.lr *= S::lit(factor);
        }
    }

    /// Global L2 norm of all gradients (missing gradients count as zero).
    pub fn grad_norm(&self) -> S {
        self.slots
            .iter()
            .filter_map(|s| s.param.grad())
            .flat_map(|g| g.into_iter())
            .map(|g| g * g)
            .sum::<S>()
            .sqrt()
    }

    /// Rescales gradients so that their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&self, max_norm: S) {
        let norm = self.grad_norm();
        if norm <= max_norm || norm == S::zero() {
            return;
        }
        let scale = max_norm / norm;
        for s in &self.slots {
            if let Some(mut g) = s.param.grad() {
                g.iter_mut().for_each(|v| *v *= scale);
                s.param.set_grad(g);
            }
        }
    }

    /// One update. Every registered parameter must carry a gradient.
    pub fn step(&mut self) -> Result<()> {
        let grads = self
            .slots
            .iter()
            .map(|s| {
                s.param
                    .grad()
                    .ok_or_else(|| Error::MissingGrad(s.name.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let (eps, wd) = (S::lit(c.eps), S::lit(c.weight_decay));
        let t = self.step as i32;
        let bc1 = S::one() - b1.powi(t);
        let bc2 = S::one() - b2.powi(t);
        for (slot, g) in self.slots.iter_mut().zip(grads) {
            let mut w = slot.param.data_mut();
            for i in 0..w.len() {
                slot.m[i] = b1 * slot.m[i] + (S::one() - b1) * g[i];
                slot.v[i] = b2 * slot.v[i] + (S::one() - b2) * g[i] * g[i];
                let mhat = slot.m[i] / bc1;
                let vhat = slot.v[i] / bc2;
                let decay = wd * w[i];
                w[i] -= slot.lr * (decay + mhat / (vhat.sqrt() + eps));
            }
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for s in &self.slots {
            s.param.zero_grad();
        }
    }
}
