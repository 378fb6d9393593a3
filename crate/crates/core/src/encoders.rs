//! Sequence encoders, projection heads and pooling.
//!
//! A [`ModalityEncoder`] maps token ids to token-level latents in the shared
//! alignment space (encoder followed by the projection head applied to every
//! row); the sequence-level representation is the masked mean of those rows.
//! Pooling after projection keeps token-level latents and sequence-level
//! representations in one space, which is what latent-space editing needs.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{join, Activation, Linear, MixerKind, MixerSpec, MixerStack, Module, Rng};
use crate::tensor::Tensor;
use crate::tokenizer::PAD;

pub struct SequenceEncoder {
    vocab_size: usize,
    max_len: usize,
    pub token_emb: Tensor,
    pub pos_emb: Tensor,
    mixer: MixerStack,
}

impl SequenceEncoder {
    pub fn new(
        vocab_size: usize,
        max_len: usize,
        kind: MixerKind,
        cfg: &ModelConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let d = cfg.d_model;
        let spec = MixerSpec {
            kind,
            dim: d,
            depth: cfg.depth,
            heads: cfg.heads,
            ff_mult: cfg.ff_mult,
            causal: false,
            bidirectional: false,
        };
        Ok(SequenceEncoder {
            vocab_size,
            max_len,
            token_emb: Tensor::randn(&[vocab_size, d], 0.5, rng).into_param(),
            pos_emb: Tensor::randn(&[max_len, d], 0.1, rng).into_param(),
            mixer: MixerStack::new(spec, rng)?,
        })
    }

    pub fn d_model(&self) -> usize {
        self.token_emb.shape()[1]
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Token-level matrix `(len, d_model)`. Pad ids are masked out of
    /// attention.
    pub fn encode_tokens(&self, ids: &[usize]) -> Result<Tensor> {
        if ids.is_empty() {
            return Err(Error::invalid("cannot encode an empty sequence"));
        }
        if ids.len() > self.max_len {
            return Err(Error::TooLong {
                len: ids.len(),
                max: self.max_len,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id: bad,
                size: self.vocab_size,
            });
        }
        let x = self
            .token_emb
            .embedding(ids)?
            .add(&self.pos_emb.slice(0, 0, ids.len())?)?;
        let mask: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
        self.mixer.forward(&x, Some(&mask))
    }
}

impl Module for SequenceEncoder {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "token_emb"), self.token_emb.clone()));
        out.push((join(prefix, "pos_emb"), self.pos_emb.clone()));
        self.mixer.collect_params(&join(prefix, "mixer"), out);
    }
}

/// Two-layer perceptron into the alignment space.
pub struct ProjectionHead {
    pub first: Linear,
    pub activation: Activation,
    pub second: Linear,
}

impl ProjectionHead {
    pub fn new(d_model: usize, d_latent: usize, activation: Activation, rng: &mut Rng) -> Self {
        ProjectionHead {
            first: Linear::new(d_model, d_latent, rng),
            activation,
            second: Linear::new(d_latent, d_latent, rng),
        }
    }

    /// Identity weights with a linear activation: output equals input.
    pub fn identity(dim: usize) -> Self {
        ProjectionHead {
            first: Linear::identity(dim),
            activation: Activation::Identity,
            second: Linear::identity(dim),
        }
    }

    pub fn d_latent(&self) -> usize {
        self.second.out_dim()
    }

    /// Applies to every row of a `(rows, d_model)` matrix.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.shape()[1] != self.first.in_dim() {
            return Err(Error::shape("project", x.shape(), &[self.first.in_dim()]));
        }
        let h = self.activation.apply(&self.first.forward(x)?);
        self.second.forward(&h)
    }

    /// Projects a single `d_model` vector to a `d_latent` vector.
    pub fn project(&self, v: &Tensor) -> Result<Tensor> {
        if v.rank() != 1 {
            return Err(Error::shape("project", v.shape(), &[self.first.in_dim()]));
        }
        let row = v.reshape(&[1, v.numel()])?;
        self.forward(&row)?.reshape(&[self.d_latent()])
    }
}

impl Module for ProjectionHead {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.first.collect_params(&join(prefix, "first"), out);
        self.second.collect_params(&join(prefix, "second"), out);
    }
}

/// Mean of the rows of `tokens` where `mask` is true; returns a 1-D vector.
pub fn pool(tokens: &Tensor, mask: &[bool]) -> Result<Tensor> {
    if tokens.rank() != 2 || tokens.shape()[0] != mask.len() {
        return Err(Error::shape("pool", tokens.shape(), &[mask.len()]));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::domain("pool", "mask selects no positions"));
    }
    let w: Vec<f64> = mask
        .iter()
        .map(|&m| if m { 1.0 / count as f64 } else { 0.0 })
        .collect();
    let weights = Tensor::new(w, &[1, mask.len()])?;
    let d = tokens.shape()[1];
    weights.matmul(tokens)?.reshape(&[d])
}

/// Encoder plus projection head for one modality.
pub struct ModalityEncoder {
    pub encoder: SequenceEncoder,
    pub head: ProjectionHead,
}

/// Token-level latents and their pooled sequence representation.
pub struct Encoded {
    /// `(len, d_latent)`.
    pub tokens: Tensor,
    pub mask: Vec<bool>,
    /// `(d_latent)`.
    pub pooled: Tensor,
}

impl ModalityEncoder {
    pub fn new(
        vocab_size: usize,
        max_len: usize,
        kind: MixerKind,
        cfg: &ModelConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(ModalityEncoder {
            encoder: SequenceEncoder::new(vocab_size, max_len, kind, cfg, rng)?,
            head: ProjectionHead::new(cfg.d_model, cfg.d_latent, cfg.head_activation, rng),
        })
    }

    pub fn encode(&self, ids: &[usize]) -> Result<Encoded> {
        let hidden = self.encoder.encode_tokens(ids)?;
        let tokens = self.head.forward(&hidden)?;
        let mask: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
        let pooled = pool(&tokens, &mask)?;
        Ok(Encoded {
            tokens,
            mask,
            pooled,
        })
    }

    pub fn represent(&self, ids: &[usize]) -> Result<Tensor> {
        Ok(self.encode(ids)?.pooled)
    }
}

impl Module for ModalityEncoder {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.encoder.collect_params(&join(prefix, "encoder"), out);
        self.head.collect_params(&join(prefix, "head"), out);
    }
}
