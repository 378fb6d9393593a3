//! Text-guided editing of existing proteins.
//!
//! Interpolation mixes the input protein's representation with the prompt's
//! on the sphere and decodes the result. Optimization moves a token-level
//! latent so that its pooled value approaches a weighted mix of both anchors,
//! then reads it out with a token-wise decoder trained as an autoencoder
//! over the frozen protein encoder.

use rand::seq::SliceRandom;

use crate::clap::{check_finite, ClapModel, TrainTrace};
use crate::config::{EditConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::evaluation::{best_of_n, SelectBy};
use crate::facilitator::Facilitator;
use crate::generator::Decoder;
use crate::nn::{join, Linear, MixerKind, MixerSpec, MixerStack, Module, Rng};
use crate::optim::{AdamW, AdamWConfig};
use crate::scalar::Scalar;
use crate::tensor::{no_grad, Tensor};
use crate::tokenizer::{decode_protein, residue_ids, PROTEIN_VOCAB_SIZE};

/// Spherical interpolation from `z_p` (`theta = 0`) to `z_t`
/// (`theta = 1`). Nearly parallel inputs fall back to linear interpolation;
/// antipodal inputs have no unique great circle and are rejected.
pub fn slerp<S: Scalar>(z_p: &[S], z_t: &[S], theta: S) -> Result<Vec<S>> {
    if z_p.len() != z_t.len() {
        return Err(Error::shape("slerp", &[z_p.len()], &[z_t.len()]));
    }
    if !(theta >= S::zero() && theta <= S::one()) {
        return Err(Error::invalid(format!(
            "interpolation coefficient {theta} outside [0, 1]"
        )));
    }
    let norm = |v: &[S]| v.iter().map(|&x| x * x).sum::<S>().sqrt();
    let (np, nt) = (norm(z_p), norm(z_t));
    if np == S::zero() || nt == S::zero() {
        return Err(Error::domain("slerp", "zero vector has no direction"));
    }
    if theta == S::zero() {
        return Ok(z_p.to_vec());
    }
    if theta == S::one() {
        return Ok(z_t.to_vec());
    }
    let cos = (z_p.iter().zip(z_t).map(|(&a, &b)| a * b).sum::<S>() / (np * nt))
        .max(-S::one())
        .min(S::one());
    let omega = cos.acos();
    let tiny = S::lit(1e-8);
    if omega < tiny {
        return Ok(z_p
            .iter()
            .zip(z_t)
            .map(|(&a, &b)| (S::one() - theta) * a + theta * b)
            .collect());
    }
    if S::lit(std::f64::consts::PI) - omega < tiny {
        return Err(Error::domain(
            "slerp",
            "antipodal vectors have no unique interpolation path",
        ));
    }
    let s = omega.sin();
    let (wa, wb) = (
        ((S::one() - theta) * omega).sin() / s,
        (theta * omega).sin() / s,
    );
    Ok(z_p
        .iter()
        .zip(z_t)
        .map(|(&a, &b)| wa * a + wb * b)
        .collect())
}

/// Maps token-level latents back to residues, one position at a time
/// through a recurrent stack.
pub struct TokenwiseDecoder {
    max_len: usize,
    pub input: Linear,
    mixer: MixerStack,
    pub out: Linear,
}

impl TokenwiseDecoder {
    pub fn new(cfg: &ModelConfig, depth: usize, rng: &mut Rng) -> Result<Self> {
        let spec = MixerSpec {
            kind: MixerKind::Recurrent,
            dim: cfg.d_model,
            depth,
            heads: 1,
            ff_mult: cfg.ff_mult,
            causal: false,
            bidirectional: false,
        };
        Ok(TokenwiseDecoder {
            max_len: cfg.max_protein_len,
            input: Linear::new(cfg.d_latent, cfg.d_model, rng),
            mixer: MixerStack::new(spec, rng)?,
            out: Linear::new(cfg.d_model, PROTEIN_VOCAB_SIZE, rng),
        })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Logits `(L, 30)` for latents `(L, d_latent)`.
    pub fn logits(&self, latents: &Tensor) -> Result<Tensor> {
        if latents.rank() != 2 || latents.shape()[1] != self.input.in_dim() {
            return Err(Error::shape(
                "tokenwise decoder",
                latents.shape(),
                &[self.input.in_dim()],
            ));
        }
        if latents.shape()[0] > self.max_len {
            return Err(Error::TooLong {
                len: latents.shape()[0],
                max: self.max_len,
            });
        }
        let h = self.mixer.forward(&self.input.forward(latents)?, None)?;
        self.out.forward(&h)
    }

    /// Most likely residue at every position.
    pub fn decode(&self, latents: &Tensor) -> Result<Vec<usize>> {
        let logits = no_grad(|| self.logits(latents))?;
        let allowed = residue_ids();
        Ok((0..latents.shape()[0])
            .map(|r| {
                let row = logits.row(r);
                let mut best = allowed[0];
                for &i in &allowed {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }
}

impl Module for TokenwiseDecoder {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.input.collect_params(&join(prefix, "input"), out);
        self.mixer.collect_params(&join(prefix, "mixer"), out);
        self.out.collect_params(&join(prefix, "out"), out);
    }
}

/// Frozen token latents of `protein` and its residue ids.
pub fn protein_latents(clap: &ClapModel, protein: &str) -> Result<(Tensor, Vec<usize>)> {
    let ids = clap.protein_ids(protein)?;
    let enc = no_grad(|| clap.protein.encode(&ids))?;
    Ok((enc.tokens.detach(), ids))
}

/// Autoencoder training of `g` on the frozen protein encoder's latents.
pub fn train_tokenwise_decoder(
    g: &TokenwiseDecoder,
    clap: &ClapModel,
    proteins: &[String],
    cfg: &EditConfig,
    rng: &mut Rng,
) -> Result<TrainTrace> {
    if proteins.is_empty() {
        return Err(Error::invalid("token-wise decoder needs training proteins"));
    }
    let data = proteins
        .iter()
        .map(|p| protein_latents(clap, p))
        .collect::<Result<Vec<_>>>()?;
    let mut opt = AdamW::with_params(
        AdamWConfig::with_lr(cfg.decoder_lr),
        g.named_params("tokenwise"),
    );
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = TrainTrace::default();
    for _ in 0..cfg.decoder_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(16) {
            opt.zero_grad();
            let mut total: Option<Tensor> = None;
            let mut count = 0;
            for &i in chunk {
                let (lat, ids) = &data[i];
                let ce = g
                    .logits(lat)?
                    .cross_entropy(ids, None)?
                    .scale(ids.len() as f64);
                count += ids.len();
                total = Some(match total {
                    Some(t) => t.add(&ce)?,
                    None => ce,
                });
            }
            let loss = total.expect("non-empty chunk").scale(1.0 / count as f64);
            let value = loss.item();
            check_finite("token-wise decoder", trace.losses.len(), value)?;
            loss.backward()?;
            opt.step()?;
            trace.losses.push(value);
        }
    }
    Ok(trace)
}

/// Fraction of positions where `g` reproduces the input residues.
pub fn reconstruction_accuracy(
    g: &TokenwiseDecoder,
    clap: &ClapModel,
    proteins: &[String],
) -> Result<f64> {
    let (mut hit, mut total) = (0, 0);
    for p in proteins {
        let (lat, ids) = protein_latents(clap, p)?;
        let out = g.decode(&lat)?;
        hit += out.iter().zip(&ids).filter(|(a, b)| a == b).count();
        total += ids.len();
    }
    Ok(hit as f64 / total.max(1) as f64)
}

#[derive(Debug, Clone)]
pub struct LatentResult {
    /// `(L, d_latent)`.
    pub z_w: Tensor,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub pooled: Vec<f64>,
}

fn latent_objective(z: &Tensor, z_t: &Tensor, z_p: &Tensor, lambda: f64) -> Result<Tensor> {
    let pooled = z.mean_axis(0)?;
    let a = pooled.sub(z_t)?.sq_norm().scale(lambda);
    let b = pooled.sub(z_p)?.sq_norm().scale(1.0 - lambda);
    a.add(&b)
}

/// Minimizes `λ ||P(z_w) - z_t||² + (1 - λ) ||P(z_w) - z_p||²` from `init`
/// with adaptive-moment steps. A step that raises the objective is undone
/// and the step size halved, so the recorded trace never increases.
pub fn optimize_latent(
    init: &Tensor,
    z_t: &[f64],
    z_p: &[f64],
    lambda: f64,
    steps: usize,
    step_size: f64,
) -> Result<LatentResult> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    if init.rank() != 2 || init.shape()[1] != z_t.len() || z_t.len() != z_p.len() {
        return Err(Error::shape("optimize_latent", init.shape(), &[z_t.len()]));
    }
    let z = Tensor::new(init.to_vec(), init.shape())?.into_param();
    let (zt, zp) = (
        Tensor::from_vec(z_t.to_vec()),
        Tensor::from_vec(z_p.to_vec()),
    );
    let mut opt = AdamW::with_params(
        AdamWConfig {
            lr: step_size,
            weight_decay: 0.0,
            ..Default::default()
        },
        vec![("z_w".into(), z.clone())],
    );
    let first = no_grad(|| latent_objective(&z, &zt, &zp, lambda))?.item();
    check_finite("latent optimization", 0, first)?;
    let mut trace = vec![first];
    let mut current = first;
    for step in 0..steps {
        if current == 0.0 {
            break;
        }
        opt.zero_grad();
        latent_objective(&z, &zt, &zp, lambda)?.backward()?;
        let saved = z.to_vec();
        opt.step()?;
        let next = no_grad(|| latent_objective(&z, &zt, &zp, lambda))?.item();
        check_finite("latent optimization", step + 1, next)?;
        if next > current {
            z.data_mut().copy_from_slice(&saved);
            opt.scale_lr(0.5);
        } else {
            current = next;
            trace.push(next);
        }
    }
    let pooled = no_grad(|| z.mean_axis(0))?.to_vec();
    Ok(LatentResult {
        z_w: z.detach(),
        trace,
        pooled,
    })
}

#[derive(Debug, Clone)]
pub struct OptimizationEdit {
    pub sequence: String,
    pub latent: LatentResult,
}

/// Latent optimization followed by token-wise decoding. With a facilitator
/// the text anchor is its estimate of the prompt's protein representation.
pub fn edit_by_optimization(
    protein: &str,
    prompt: &str,
    lambda: f64,
    clap: &ClapModel,
    facilitator: Option<&Facilitator>,
    g: &TokenwiseDecoder,
    cfg: &EditConfig,
) -> Result<OptimizationEdit> {
    let (tokens, _) = protein_latents(clap, protein)?;
    if tokens.shape()[0] > g.max_len() {
        return Err(Error::TooLong {
            len: tokens.shape()[0],
            max: g.max_len(),
        });
    }
    let z_p = no_grad(|| tokens.mean_axis(0))?.to_vec();
    let mut z_t = clap.embed_text(prompt)?;
    if let Some(f) = facilitator {
        z_t = f.facilitate(&z_t)?;
    }
    let latent = optimize_latent(&tokens, &z_t, &z_p, lambda, cfg.steps, cfg.step_size)?;
    let sequence = decode_protein(&g.decode(&latent.z_w)?)?;
    Ok(OptimizationEdit { sequence, latent })
}

pub struct InterpolationRequest<'a> {
    pub protein: &'a str,
    pub prompt: &'a str,
    pub theta: f64,
    pub samples: usize,
    /// Longest input protein of the batch.
    pub max_len: usize,
    pub select_by: SelectBy,
}

/// Decodes `samples` candidates from the interpolated condition and keeps
/// the one closest to the prompt (or to the input protein).
pub fn edit_by_interpolation(
    req: &InterpolationRequest<'_>,
    clap: &ClapModel,
    facilitator: Option<&Facilitator>,
    decoder: &Decoder,
    rng: &mut Rng,
) -> Result<String> {
    if req.samples == 0 {
        return Err(Error::invalid(
            "interpolation editing needs at least one sample",
        ));
    }
    let z_p = clap.embed_protein(req.protein)?;
    let mut z_t = clap.embed_text(req.prompt)?;
    if let Some(f) = facilitator {
        z_t = f.facilitate(&z_t)?;
    }
    let cond = slerp(&z_p, &z_t, req.theta)?;
    let candidates = (0..req.samples)
        .map(|_| decoder.generate(&cond, req.max_len, rng))
        .collect::<Result<Vec<_>>>()?;
    let target = match req.select_by {
        SelectBy::Prompt => req.prompt,
        SelectBy::Protein => req.protein,
    };
    let (best, _) = best_of_n(&candidates, target, req.select_by, clap)?;
    Ok(candidates[best].clone())
}
