//! A trained decoder of either family behind one interface.

use serde::{Deserialize, Serialize};

use crate::decoder_ar::{sample_temperature, ArDecoder};
use crate::diffusion::{sample, SamplerKind, Schedule, TransitionNetwork};
use crate::error::{Error, Result};
use crate::nn::{MixerKind, Module, Rng};
use crate::tensor::Tensor;
use crate::tokenizer::decode_protein;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecoderKind {
    #[serde(rename = "ar")]
    Ar,
    #[serde(rename = "diff-rnn")]
    DiffRnn,
    #[serde(rename = "diff-attn")]
    DiffAttn,
}

impl DecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::Ar => "ar",
            DecoderKind::DiffRnn => "diff-rnn",
            DecoderKind::DiffAttn => "diff-attn",
        }
    }

    /// Parameter-name prefix inside checkpoints.
    pub fn prefix(self) -> &'static str {
        match self {
            DecoderKind::Ar => "decoder_ar",
            DecoderKind::DiffRnn => "decoder_diff_rnn",
            DecoderKind::DiffAttn => "decoder_diff_attn",
        }
    }

    pub fn all() -> [DecoderKind; 3] {
        [DecoderKind::Ar, DecoderKind::DiffRnn, DecoderKind::DiffAttn]
    }

    pub(crate) fn mixer(self) -> Option<MixerKind> {
        match self {
            DecoderKind::Ar => None,
            DecoderKind::DiffRnn => Some(MixerKind::Recurrent),
            DecoderKind::DiffAttn => Some(MixerKind::Attention),
        }
    }
}

impl std::str::FromStr for DecoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DecoderKind::all()
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown decoder kind '{s}'")))
    }
}

pub enum Decoder {
    Ar {
        model: ArDecoder,
        temperature: f64,
    },
    Diffusion {
        kind: DecoderKind,
        model: TransitionNetwork,
        schedule: Schedule,
        sampler: SamplerKind,
    },
}

impl Decoder {
    pub fn kind(&self) -> DecoderKind {
        match self {
            Decoder::Ar { .. } => DecoderKind::Ar,
            Decoder::Diffusion { kind, .. } => *kind,
        }
    }

    pub fn capacity(&self) -> usize {
        match self {
            Decoder::Ar { model, .. } => model.max_len(),
            Decoder::Diffusion { model, .. } => model.max_len(),
        }
    }

    /// One sampled protein of at most `max_len` residues. The diffusion
    /// decoders always emit exactly `max_len` residues.
    pub fn generate(&self, cond: &[f64], max_len: usize, rng: &mut Rng) -> Result<String> {
        let max_len = max_len.min(self.capacity());
        let ids = match self {
            Decoder::Ar { model, temperature } => {
                sample_temperature(model, cond, max_len, *temperature, rng)?.ids
            }
            Decoder::Diffusion {
                model,
                schedule,
                sampler,
                ..
            } => {
                sample(
                    *sampler,
                    &model.conditioned(cond),
                    schedule,
                    max_len.max(1),
                    rng,
                )?
                .tokens
            }
        };
        decode_protein(&ids)
    }

    pub fn module(&self) -> &dyn Module {
        match self {
            Decoder::Ar { model, .. } => model,
            Decoder::Diffusion { model, .. } => model,
        }
    }
}

impl Module for Decoder {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.module().collect_params(prefix, out)
    }
}
