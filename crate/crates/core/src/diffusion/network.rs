//! Conditional transition network predicting clean tokens from noised ones.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::sampling::{forward_corrupt, Denoiser};
use super::schedule::Schedule;
use crate::clap::{check_finite, TrainTrace};
use crate::config::{DiffusionConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{join, Linear, MixerKind, MixerSpec, MixerStack, Module, Rng};
use crate::optim::{AdamW, AdamWConfig};
use crate::tensor::{no_grad, softmax_in_place, Tensor};
use crate::tokenizer::{residue_ids, MASK, PAD, PROTEIN_VOCAB_SIZE};

pub struct TransitionNetwork {
    max_len: usize,
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    /// One row per time step `0..=T`.
    pub time_emb: Tensor,
    pub cond: Linear,
    mixer: MixerStack,
    pub out: Linear,
}

impl TransitionNetwork {
    /// `kind` picks a bidirectional recurrent stack or non-causal attention.
    pub fn new(cfg: &ModelConfig, steps: usize, kind: MixerKind, rng: &mut Rng) -> Result<Self> {
        let d = cfg.d_model;
        let spec = MixerSpec {
            kind,
            dim: d,
            depth: cfg.depth,
            heads: cfg.heads,
            ff_mult: cfg.ff_mult,
            causal: false,
            bidirectional: true,
        };
        Ok(TransitionNetwork {
            max_len: cfg.max_protein_len,
            tok_emb: Tensor::randn(&[PROTEIN_VOCAB_SIZE, d], 0.5, rng).into_param(),
            pos_emb: Tensor::randn(&[cfg.max_protein_len, d], 0.1, rng).into_param(),
            time_emb: Tensor::randn(&[steps + 1, d], 0.1, rng).into_param(),
            cond: Linear::new(cfg.d_latent, d, rng),
            mixer: MixerStack::new(spec, rng)?,
            out: Linear::new(d, PROTEIN_VOCAB_SIZE, rng),
        })
    }

    pub fn steps(&self) -> usize {
        self.time_emb.shape()[0] - 1
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn kind(&self) -> MixerKind {
        self.mixer.kind()
    }

    pub fn d_latent(&self) -> usize {
        self.cond.in_dim()
    }

    /// Logits `(len, 30)` for noised tokens `x_t` at step `t`.
    pub fn logits(&self, x_t: &[usize], t: usize, cond: &[f64]) -> Result<Tensor> {
        if x_t.is_empty() {
            return Err(Error::invalid("cannot denoise an empty sequence"));
        }
        if x_t.len() > self.max_len {
            return Err(Error::TooLong {
                len: x_t.len(),
                max: self.max_len,
            });
        }
        if t > self.steps() {
            return Err(Error::invalid(format!(
                "time step {t} beyond {}",
                self.steps()
            )));
        }
        if cond.len() != self.d_latent() {
            return Err(Error::shape(
                "diffusion condition",
                &[cond.len()],
                &[self.d_latent()],
            ));
        }
        let d = self.tok_emb.shape()[1];
        let c = self
            .cond
            .forward(&Tensor::new(cond.to_vec(), &[1, cond.len()])?)?
            .reshape(&[d])?;
        let time = self.time_emb.slice(0, t, t + 1)?.reshape(&[d])?;
        let x = self
            .tok_emb
            .embedding(x_t)?
            .add(&self.pos_emb.slice(0, 0, x_t.len())?)?
            .add(&c.add(&time)?)?;
        let mask: Vec<bool> = x_t.iter().map(|&i| i != PAD).collect();
        let h = self.mixer.forward(&x, Some(&mask))?;
        self.out.forward(&h)
    }

    /// Denoiser bound to one condition. Predictions are restricted to
    /// residue tokens.
    pub fn conditioned<'a>(&'a self, cond: &'a [f64]) -> ConditionedNetwork<'a> {
        ConditionedNetwork { net: self, cond }
    }
}

impl Module for TransitionNetwork {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "tok_emb"), self.tok_emb.clone()));
        out.push((join(prefix, "pos_emb"), self.pos_emb.clone()));
        out.push((join(prefix, "time_emb"), self.time_emb.clone()));
        self.cond.collect_params(&join(prefix, "cond"), out);
        self.mixer.collect_params(&join(prefix, "mixer"), out);
        self.out.collect_params(&join(prefix, "out"), out);
    }
}

pub struct ConditionedNetwork<'a> {
    net: &'a TransitionNetwork,
    cond: &'a [f64],
}

impl Denoiser for ConditionedNetwork<'_> {
    fn predict(&self, x_t: &[usize], t: usize) -> Result<Vec<Vec<f64>>> {
        let logits = no_grad(|| self.net.logits(x_t, t, self.cond))?;
        let allowed = residue_ids();
        Ok((0..x_t.len())
            .map(|r| {
                let row = logits.row(r);
                let mut sub: Vec<f64> = allowed.iter().map(|&i| row[i]).collect();
                softmax_in_place(&mut sub);
                let mut p = vec![0.0; PROTEIN_VOCAB_SIZE];
                for (&i, v) in allowed.iter().zip(sub) {
                    p[i] = v;
                }
                p
            })
            .collect())
    }
}

/// Cross-entropy against the clean tokens on masked positions only,
/// averaged over those positions, plus the number of masked positions.
/// A batch without masked positions yields a constant zero.
pub fn diffusion_loss(
    net: &TransitionNetwork,
    batch: &[(&[f64], &[usize])],
    schedule: &Schedule,
    rng: &mut Rng,
) -> Result<(Tensor, usize)> {
    let mut total: Option<Tensor> = None;
    let mut masked = 0;
    for (cond, x0) in batch {
        let t = rng.random_range(1..=schedule.steps());
        let x_t = forward_corrupt(x0, t, schedule, rng)?;
        let targets: Vec<usize> = x0
            .iter()
            .zip(&x_t)
            .map(|(&a, &b)| if b == MASK { a } else { PAD })
            .collect();
        let n = targets.iter().filter(|&&v| v != PAD).count();
        if n == 0 {
            continue;
        }
        let ce = net
            .logits(&x_t, t, cond)?
            .cross_entropy(&targets, Some(PAD))?
            .scale(n as f64);
        masked += n;
        total = Some(match total {
            Some(acc) => acc.add(&ce)?,
            None => ce,
        });
    }
    Ok(match total {
        Some(t) => (t.scale(1.0 / masked as f64), masked),
        None => (Tensor::scalar(0.0), 0),
    })
}

/// Training trace plus the number of batches that had nothing masked.
#[derive(Debug, Clone, Default)]
pub struct DiffusionTrace {
    pub trace: TrainTrace,
    pub empty_batches: usize,
}

pub fn train_diffusion(
    net: &TransitionNetwork,
    data: &[(Vec<f64>, Vec<usize>)],
    schedule: &Schedule,
    cfg: &DiffusionConfig,
    rng: &mut Rng,
) -> Result<DiffusionTrace> {
    if data.is_empty() {
        return Err(Error::invalid("diffusion training set is empty"));
    }
    let mut opt = AdamW::with_params(AdamWConfig::with_lr(cfg.lr), net.named_params("diffusion"));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut out = DiffusionTrace::default();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<(&[f64], &[usize])> = chunk
                .iter()
                .map(|&i| {
                    (
                        data[i].0.as_slice(),
                        &data[i].1[..data[i].1.len().min(net.max_len)],
                    )
                })
                .collect();
            opt.zero_grad();
            let (loss, masked) = diffusion_loss(net, &batch, schedule, rng)?;
            if masked == 0 {
                out.empty_batches += 1;
                continue;
            }
            let value = loss.item();
            check_finite("diffusion decoder", out.trace.losses.len(), value)?;
            loss.backward()?;
            opt.clip_grad_norm(5.0);
            opt.step()?;
            out.trace.losses.push(value);
        }
    }
    Ok(out)
}
