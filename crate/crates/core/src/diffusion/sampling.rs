//! Forward corruption and the two reverse samplers.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::schedule::Schedule;
use crate::decoder_ar::draw;
use crate::error::{Error, Result};
use crate::nn::Rng;
use crate::scalar::Scalar;
use crate::tokenizer::PAD;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Unmask each masked position with probability `1/t` per step.
    #[default]
    Simplified,
    /// Sample from the posterior mixed over the predicted clean tokens.
    Weighted,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simplified" => Ok(SamplerKind::Simplified),
            "weighted" => Ok(SamplerKind::Weighted),
            other => Err(Error::invalid(format!("unknown sampler '{other}'"))),
        }
    }
}

/// Predicts the clean sequence from a noised one.
pub trait Denoiser<S: Scalar = f64> {
    /// `p(x_0 | x_t)` for every position; each row has one entry per token.
    fn predict(&self, x_t: &[usize], t: usize) -> Result<Vec<Vec<S>>>;
}

/// Keeps each non-pad position with probability `ᾱ_t`, otherwise replaces
/// it by the absorbing id.
pub fn forward_corrupt<S: Scalar>(
    x0: &[usize],
    t: usize,
    schedule: &Schedule<S>,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let keep = schedule.alpha_bar(t)?.as_f64();
    let m = schedule.mask();
    if let Some(pos) = x0.iter().position(|&x| x == m) {
        return Err(Error::invalid(format!(
            "clean sequence holds the absorbing token at position {pos}"
        )));
    }
    Ok(x0
        .iter()
        .map(|&x| {
            if x == PAD || rng.random::<f64>() < keep {
                x
            } else {
                m
            }
        })
        .collect())
}

/// One draw of `x_1 .. x_T` by applying `Q_t` step by step.
pub fn forward_trajectory<S: Scalar>(
    x0: &[usize],
    schedule: &Schedule<S>,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    let m = schedule.mask();
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(schedule.steps());
    for t in 1..=schedule.steps() {
        let b = schedule.beta(t)?.as_f64();
        for v in x.iter_mut() {
            if *v != PAD && *v != m && rng.random::<f64>() < b {
                *v = m;
            }
        }
        out.push(x.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    pub tokens: Vec<usize>,
    /// Reverse steps taken; always `T`.
    pub steps: usize,
    /// Positions unmasked at each step, from `t = T` down.
    pub filled: Vec<usize>,
}

fn to_f64_without_mask<S: Scalar>(row: &[S], mask: usize) -> Vec<f64> {
    let mut p: Vec<f64> = row.iter().map(|v| v.as_f64().max(0.0)).collect();
    if mask < p.len() {
        p[mask] = 0.0;
    }
    let z: f64 = p.iter().sum();
    if z > 0.0 {
        p.iter_mut().for_each(|v| *v /= z);
    }
    p
}

fn check_rows<S: Scalar>(probs: &[Vec<S>], len: usize, vocab: usize) -> Result<()> {
    if probs.len() != len || probs.iter().any(|r| r.len() != vocab) {
        return Err(Error::shape(
            "denoiser output",
            &[probs.len()],
            &[len, vocab],
        ));
    }
    Ok(())
}

/// Starts fully masked; at step `t` every still-masked position is selected
/// with probability `1/t` and filled from the denoiser's prediction.
pub fn sample_simplified<S: Scalar, D: Denoiser<S> + ?Sized>(
    denoiser: &D,
    schedule: &Schedule<S>,
    len: usize,
    rng: &mut Rng,
) -> Result<SampleTrace> {
    let m = schedule.mask();
    let mut x = vec![m; len];
    let mut filled = Vec::with_capacity(schedule.steps());
    for t in (1..=schedule.steps()).rev() {
        let chance = 1.0 / t as f64;
        let chosen: Vec<usize> = (0..len)
            .filter(|&i| x[i] == m)
            .filter(|_| t == 1 || rng.random::<f64>() < chance)
            .collect();
        if !chosen.is_empty() {
            let probs = denoiser.predict(&x, t)?;
            check_rows(&probs, len, schedule.vocab())?;
            let next: Vec<(usize, usize)> = chosen
                .iter()
                .map(|&i| (i, draw(&to_f64_without_mask(&probs[i], m), rng)))
                .collect();
            for (i, tok) in next {
                x[i] = tok;
            }
        }
        filled.push(chosen.len());
    }
    Ok(SampleTrace {
        tokens: x,
        steps: filled.len(),
        filled,
    })
}

/// Reverse chain `x_T -> x_0` sampling each masked position from
/// `Σ_{x0} q(x_t | x_{t+1}, x0) p(x0 | x_{t+1})`. Masks left after the last
/// step take the denoiser's most likely token.
pub fn sample_weighted<S: Scalar, D: Denoiser<S> + ?Sized>(
    denoiser: &D,
    schedule: &Schedule<S>,
    len: usize,
    rng: &mut Rng,
) -> Result<SampleTrace> {
    let m = schedule.mask();
    let mut x = vec![m; len];
    let mut filled = Vec::with_capacity(schedule.steps());
    let mut last: Vec<Vec<f64>> = Vec::new();
    for t in (0..schedule.steps()).rev() {
        let probs = denoiser.predict(&x, t + 1)?;
        check_rows(&probs, len, schedule.vocab())?;
        let clean: Vec<Vec<f64>> = probs.iter().map(|r| to_f64_without_mask(r, m)).collect();
        let mut count = 0;
        for i in 0..len {
            if x[i] != m {
                continue;
            }
            let weights: Vec<S> = clean[i].iter().map(|&v| S::lit(v)).collect();
            let mix = schedule.posterior_mixture(m, &weights, t)?;
            let total: S = mix.iter().copied().sum();
            if (total - S::one()).abs() > S::epsilon() * S::lit(256.0) {
                return Err(Error::domain(
                    "sample_weighted",
                    format!("mixture sums to {total}"),
                ));
            }
            let mix: Vec<f64> = mix.iter().map(|v| v.as_f64()).collect();
            let tok = draw(&mix, rng);
            if tok != m {
                x[i] = tok;
                count += 1;
            }
        }
        filled.push(count);
        last = clean;
    }
    for (i, v) in x.iter_mut().enumerate() {
        if *v == m {
            *v = argmax(&last[i]);
        }
    }
    Ok(SampleTrace {
        tokens: x,
        steps: filled.len(),
        filled,
    })
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub fn sample<S: Scalar, D: Denoiser<S> + ?Sized>(
    kind: SamplerKind,
    denoiser: &D,
    schedule: &Schedule<S>,
    len: usize,
    rng: &mut Rng,
) -> Result<SampleTrace> {
    match kind {
        SamplerKind::Simplified => sample_simplified(denoiser, schedule, len, rng),
        SamplerKind::Weighted => sample_weighted(denoiser, schedule, len, rng),
    }
}
