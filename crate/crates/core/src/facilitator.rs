//! Regression from the text representation space to the protein
//! representation space.
//!
//! The model is the mean of a conditional Gaussian with fixed isotropic
//! covariance, so maximum likelihood reduces to squared error. The network is
//! residual, `f(z) = z + mlp(z)`, with the last layer zero-initialized so
//! that a fresh facilitator is the identity map.

use rand::seq::SliceRandom;

use crate::clap::{check_finite, TrainTrace};
use crate::config::FacilitatorConfig;
use crate::error::{Error, Result};
use crate::nn::{join, stack_rows, Linear, Module, Rng};
use crate::optim::{AdamW, AdamWConfig};
use crate::tensor::{no_grad, Tensor};

pub struct Facilitator {
    pub hidden1: Linear,
    pub hidden2: Linear,
    pub out: Linear,
}

impl Facilitator {
    pub fn new(d_latent: usize, rng: &mut Rng) -> Self {
        let h = 2 * d_latent;
        Facilitator {
            hidden1: Linear::new(d_latent, h, rng),
            hidden2: Linear::new(h, h, rng),
            out: Linear::zeros(h, d_latent),
        }
    }

    pub fn dim(&self) -> usize {
        self.hidden1.in_dim()
    }

    /// Rows of `(n, d_latent)` to rows of `(n, d_latent)`.
    pub fn forward(&self, z_t: &Tensor) -> Result<Tensor> {
        if z_t.rank() != 2 || z_t.shape()[1] != self.dim() {
            return Err(Error::shape("facilitator", z_t.shape(), &[self.dim()]));
        }
        let h = self.hidden1.forward(z_t)?.relu();
        let h = self.hidden2.forward(&h)?.relu();
        z_t.add(&self.out.forward(&h)?)
    }

    /// Single-vector form returning a plain vector; no graph is recorded.
    pub fn facilitate(&self, z_t: &[f64]) -> Result<Vec<f64>> {
        no_grad(|| {
            let row = Tensor::new(z_t.to_vec(), &[1, z_t.len()])?;
            Ok(self.forward(&row)?.to_vec())
        })
    }
}

impl Module for Facilitator {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.hidden1.collect_params(&join(prefix, "hidden1"), out);
        self.hidden2.collect_params(&join(prefix, "hidden2"), out);
        self.out.collect_params(&join(prefix, "out"), out);
    }
}

/// `||f(z_t) - z_p||^2` summed over the feature axis and averaged over rows.
pub fn facilitator_loss(model: &Facilitator, z_t: &Tensor, z_p: &Tensor) -> Result<Tensor> {
    let pred = model.forward(z_t)?;
    if pred.shape() != z_p.shape() {
        return Err(Error::shape("facilitator_loss", pred.shape(), z_p.shape()));
    }
    let rows = z_p.shape()[0] as f64;
    Ok(pred.sub(z_p)?.sq_norm().scale(1.0 / rows))
}

/// The condition handed to a decoder: the facilitated text representation,
/// or the text representation itself when `bypass` is set.
pub fn condition(model: Option<&Facilitator>, z_t: &[f64], bypass: bool) -> Result<Vec<f64>> {
    match (model, bypass) {
        (Some(f), false) => f.facilitate(z_t),
        _ => Ok(z_t.to_vec()),
    }
}

/// Fits the facilitator on frozen `(z_t, z_p)` pairs.
pub fn train_facilitator(
    model: &Facilitator,
    z_t: &[Vec<f64>],
    z_p: &[Vec<f64>],
    cfg: &FacilitatorConfig,
    rng: &mut Rng,
) -> Result<TrainTrace> {
    if z_t.len() != z_p.len() || z_t.is_empty() {
        return Err(Error::invalid(
            "facilitator training needs equally many, non-zero text and protein vectors",
        ));
    }
    let mut opt = AdamW::with_params(
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
        model.named_params("facilitator"),
    );
    let to_rows = |vs: &[&Vec<f64>]| -> Result<Tensor> {
        let rows: Vec<Tensor> = vs.iter().map(|v| Tensor::from_vec(v.to_vec())).collect();
        stack_rows(&rows)
    };
    let mut order: Vec<usize> = (0..z_t.len()).collect();
    let mut trace = TrainTrace::default();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let t = to_rows(&chunk.iter().map(|&i| &z_t[i]).collect::<Vec<_>>())?;
            let p = to_rows(&chunk.iter().map(|&i| &z_p[i]).collect::<Vec<_>>())?;
            opt.zero_grad();
            let loss = facilitator_loss(model, &t, &p)?;
            let value = loss.item();
            check_finite("facilitator", trace.losses.len(), value)?;
            loss.backward()?;
            opt.step()?;
            trace.losses.push(value);
        }
    }
    Ok(trace)
}
