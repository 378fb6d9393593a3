//! Contrastive alignment of text and protein representations.
//!
//! Positives are the matched pairs of a batch; every mismatched pair inside
//! the batch serves as a negative. The energy of a pair is the dot product of
//! the two representations, divided by the temperature when it is non-zero.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{ClapConfig, ModelConfig};
use crate::data::PairRecord;
use crate::encoders::ModalityEncoder;
use crate::error::{Error, Result};
use crate::nn::{join, stack_rows, Module, Rng};
use crate::optim::{AdamW, AdamWConfig};
use crate::scalar::Scalar;
use crate::tensor::{no_grad, Tensor};
use crate::tokenizer::{encode_protein, TextVocabulary, PROTEIN_VOCAB_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveLoss {
    EbmNce,
    #[default]
    InfoNce,
}

fn temperature_divisor<S: Scalar>(tau: S) -> S {
    if tau > S::zero() {
        tau
    } else {
        S::one()
    }
}

/// `<z_t, z_p> / tau`, with `tau = 0` meaning no scaling.
pub fn energy<S: Scalar>(z_t: &Tensor<S>, z_p: &Tensor<S>, tau: S) -> Result<Tensor<S>> {
    Ok(z_t.dot(z_p)?.scale(S::one() / temperature_divisor(tau)))
}

/// `E[i][j] = <text_i, protein_j> / tau` for `(B, d)` representation
/// matrices.
pub fn energy_matrix<S: Scalar>(
    text: &Tensor<S>,
    protein: &Tensor<S>,
    tau: S,
) -> Result<Tensor<S>> {
    if text.rank() != 2 || text.shape() != protein.shape() {
        return Err(Error::shape("energy_matrix", text.shape(), protein.shape()));
    }
    Ok(text
        .matmul(&protein.t()?)?
        .scale(S::one() / temperature_divisor(tau)))
}

fn check_batch<S: Scalar>(energies: &Tensor<S>) -> Result<usize> {
    let s = energies.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::shape("contrastive_loss", s, &[]));
    }
    if s[0] < 2 {
        return Err(Error::invalid(
            "contrastive loss needs a batch of at least 2 pairs",
        ));
    }
    Ok(s[0])
}

/// Binary-classification objective over a `(B, B)` energy matrix.
///
/// Each half pairs the positive `log σ(E_ii)` with `log(1 - σ(E_neg))` over
/// the in-batch negatives of one modality (mismatched texts for a protein,
/// then mismatched proteins for a text), weighted by `-1/2`.
pub fn ebm_nce_from_energies<S: Scalar>(energies: &Tensor<S>) -> Result<Tensor<S>> {
    let b = check_batch(energies)?;
    let bf = S::from_usize_lossy(b);
    let eye = Tensor::<S>::eye(b);
    let off = Tensor::<S>::ones(&[b, b]).sub(&eye)?;
    let pos = energies.log_sigmoid().mul(&eye)?.sum().scale(S::one() / bf);
    // log(1 - σ(x)) = log σ(-x)
    let neg_all = energies.neg().log_sigmoid().mul(&off)?;
    let per_pair = S::one() / (bf * (bf - S::one()));
    // column means: negatives are other texts for protein j
    let neg_texts = neg_all.sum_axis(0)?.sum().scale(per_pair);
    // row means: negatives are other proteins for text i
    let neg_proteins = neg_all.sum_axis(1)?.sum().scale(per_pair);
    let half = S::lit(0.5);
    let first = pos.add(&neg_texts)?.scale(-half);
    let second = pos.add(&neg_proteins)?.scale(-half);
    first.add(&second)
}

/// Multiclass objective: symmetric cross-entropy of the energy matrix
/// against its diagonal, both directions weighted by `1/2`.
pub fn infonce_from_energies<S: Scalar>(energies: &Tensor<S>) -> Result<Tensor<S>> {
    let b = check_batch(energies)?;
    let targets: Vec<usize> = (0..b).collect();
    let text_to_protein = energies.cross_entropy(&targets, None)?;
    let protein_to_text = energies.t()?.cross_entropy(&targets, None)?;
    Ok(text_to_protein.add(&protein_to_text)?.scale(S::lit(0.5)))
}

pub fn ebm_nce_loss<S: Scalar>(text: &Tensor<S>, protein: &Tensor<S>, tau: S) -> Result<Tensor<S>> {
    ebm_nce_from_energies(&energy_matrix(text, protein, tau)?)
}

pub fn infonce_loss<S: Scalar>(text: &Tensor<S>, protein: &Tensor<S>, tau: S) -> Result<Tensor<S>> {
    infonce_from_energies(&energy_matrix(text, protein, tau)?)
}

pub fn contrastive_loss<S: Scalar>(
    kind: ContrastiveLoss,
    text: &Tensor<S>,
    protein: &Tensor<S>,
    tau: S,
) -> Result<Tensor<S>> {
    match kind {
        ContrastiveLoss::EbmNce => ebm_nce_loss(text, protein, tau),
        ContrastiveLoss::InfoNce => infonce_loss(text, protein, tau),
    }
}

/// Cosine similarity of two plain vectors.
pub fn cosine<S: Scalar>(a: &[S], b: &[S]) -> S {
    let dot: S = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|&x| x * x).sum::<S>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<S>().sqrt();
    if na == S::zero() || nb == S::zero() {
        S::zero()
    } else {
        dot / (na * nb)
    }
}

/// Text and protein encoders with their projection heads, plus the text
/// vocabulary they were trained with.
pub struct ClapModel {
    pub vocab: TextVocabulary,
    pub text: ModalityEncoder,
    pub protein: ModalityEncoder,
    max_text_len: usize,
}

impl ClapModel {
    pub fn new(vocab: TextVocabulary, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let text = ModalityEncoder::new(vocab.len(), cfg.max_text_len, cfg.text_encoder, cfg, rng)?;
        let protein = ModalityEncoder::new(
            PROTEIN_VOCAB_SIZE,
            cfg.max_protein_len,
            cfg.protein_encoder,
            cfg,
            rng,
        )?;
        Ok(ClapModel {
            vocab,
            text,
            protein,
            max_text_len: cfg.max_text_len,
        })
    }

    pub fn d_latent(&self) -> usize {
        self.protein.head.d_latent()
    }

    pub fn text_ids(&self, text: &str) -> Vec<usize> {
        self.vocab
            .encode(text, None)
            .ids
            .into_iter()
            .take(self.max_text_len)
            .collect()
    }

    /// Residue ids (no special tokens), truncated to the positional table.
    pub fn protein_ids(&self, protein: &str) -> Result<Vec<usize>> {
        Ok(encode_protein(protein, None, false)?
            .ids
            .into_iter()
            .take(self.protein.encoder.max_len())
            .collect())
    }

    pub fn text_repr(&self, text: &str) -> Result<Tensor> {
        self.text.represent(&self.text_ids(text))
    }

    pub fn protein_repr(&self, protein: &str) -> Result<Tensor> {
        self.protein.represent(&self.protein_ids(protein)?)
    }

    /// Cosine similarity of the projected representations, in `[-1, 1]`.
    pub fn similarity(&self, text: &str, protein: &str) -> Result<f64> {
        no_grad(|| {
            let t = self.text_repr(text)?.to_vec();
            let p = self.protein_repr(protein)?.to_vec();
            Ok(cosine(&t, &p))
        })
    }

    /// Frozen text representation as a plain vector.
    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        no_grad(|| Ok(self.text_repr(text)?.to_vec()))
    }

    pub fn embed_protein(&self, protein: &str) -> Result<Vec<f64>> {
        no_grad(|| Ok(self.protein_repr(protein)?.to_vec()))
    }

    /// Loss of one batch of aligned records.
    pub fn batch_loss(
        &self,
        batch: &[&PairRecord],
        kind: ContrastiveLoss,
        tau: f64,
    ) -> Result<Tensor> {
        let texts = batch
            .iter()
            .map(|r| self.text_repr(&r.text))
            .collect::<Result<Vec<_>>>()?;
        let proteins = batch
            .iter()
            .map(|r| self.protein_repr(&r.sequence))
            .collect::<Result<Vec<_>>>()?;
        contrastive_loss(kind, &stack_rows(&texts)?, &stack_rows(&proteins)?, tau)
    }
}

impl Module for ClapModel {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.text.collect_params(&join(prefix, "text"), out);
        self.protein.collect_params(&join(prefix, "protein"), out);
    }
}

/// Per-step training losses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
}

impl TrainTrace {
    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// Mean of the final `n` losses.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let n = n.min(self.losses.len()).max(1);
        self.losses[self.losses.len().saturating_sub(n)..]
            .iter()
            .sum::<f64>()
            / n as f64
    }
}

pub(crate) fn check_finite(stage: &str, step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!(
            "{stage}: non-finite loss {loss} at step {step}"
        )))
    }
}

/// Joint training of both encoders. Batches are reshuffled every epoch;
/// a trailing batch with fewer than two pairs is skipped.
pub fn train_clap(
    model: &ClapModel,
    data: &[PairRecord],
    cfg: &ClapConfig,
    rng: &mut Rng,
) -> Result<TrainTrace> {
    train_clap_steps(model, data, cfg, None, rng)
}

/// As [`train_clap`], optionally stopping after `max_steps` updates.
pub fn train_clap_steps(
    model: &ClapModel,
    data: &[PairRecord],
    cfg: &ClapConfig,
    max_steps: Option<usize>,
    rng: &mut Rng,
) -> Result<TrainTrace> {
    if data.len() < 2 {
        return Err(Error::invalid(
            "contrastive training needs at least two pairs",
        ));
    }
    let adam = AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..Default::default()
    };
    let mut opt = AdamW::new(adam);
    opt.add_group(model.text.named_params("text"), cfg.lr_text);
    opt.add_group(model.protein.named_params("protein"), cfg.lr_protein);
    let mut trace = TrainTrace::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    'outer: for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            if max_steps.is_some_and(|m| trace.losses.len() >= m) {
                break 'outer;
            }
            let batch: Vec<&PairRecord> = chunk.iter().map(|&i| &data[i]).collect();
            opt.zero_grad();
            let loss = model.batch_loss(&batch, cfg.loss, cfg.temperature)?;
            let value = loss.item();
            check_finite("contrastive alignment", trace.losses.len(), value)?;
            loss.backward()?;
            opt.clip_grad_norm(5.0);
            opt.step()?;
            trace.losses.push(value);
        }
    }
    Ok(trace)
}

/// Mean loss over consecutive batches of `data` without updating anything.
pub fn evaluate_clap(model: &ClapModel, data: &[PairRecord], cfg: &ClapConfig) -> Result<f64> {
    no_grad(|| {
        let mut total = 0.0;
        let mut n = 0;
        for chunk in data.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&PairRecord> = chunk.iter().collect();
            total += model.batch_loss(&batch, cfg.loss, cfg.temperature)?.item();
            n += 1;
        }
        if n == 0 {
            return Err(Error::invalid("evaluation set holds fewer than two pairs"));
        }
        Ok(total / n as f64)
    })
}
