//! Run configuration. Every stage reads its section from [`RunConfig`]; the
//! whole document is serialized into checkpoints and reports.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clap::ContrastiveLoss;
use crate::diffusion::SamplerKind;
use crate::error::{Error, Result};
use crate::nn::{Activation, MixerKind};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_latent: usize,
    pub depth: usize,
    pub heads: usize,
    pub ff_mult: usize,
    /// Positional table size for protein encoders and decoders.
    pub max_protein_len: usize,
    pub max_text_len: usize,
    pub text_vocab_size: usize,
    pub text_encoder: MixerKind,
    pub protein_encoder: MixerKind,
    pub head_activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            d_latent: 64,
            depth: 2,
            heads: 4,
            ff_mult: 2,
            max_protein_len: 128,
            max_text_len: 32,
            text_vocab_size: 512,
            text_encoder: MixerKind::Attention,
            protein_encoder: MixerKind::Attention,
            head_activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClapConfig {
    pub loss: ContrastiveLoss,
    /// `0` disables temperature scaling.
    pub temperature: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_text: f64,
    pub lr_protein: f64,
    pub weight_decay: f64,
}

impl Default for ClapConfig {
    fn default() -> Self {
        ClapConfig {
            loss: ContrastiveLoss::InfoNce,
            temperature: 0.1,
            epochs: 5,
            batch_size: 8,
            lr_text: 1e-3,
            lr_protein: 1e-3,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FacilitatorConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for FacilitatorConfig {
    fn default() -> Self {
        FacilitatorConfig {
            epochs: 32,
            batch_size: 16,
            lr: 1e-3,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Sampling temperature for best-of-N generation.
    pub sample_temperature: f64,
}

impl Default for ArConfig {
    fn default() -> Self {
        ArConfig {
            epochs: 4,
            batch_size: 16,
            lr: 1e-3,
            sample_temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    /// Number of diffusion steps.
    pub steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub sampler: SamplerKind,
    /// Generated sequence length.
    pub length: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            steps: 64,
            epochs: 4,
            batch_size: 16,
            lr: 1e-3,
            sampler: SamplerKind::Simplified,
            length: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    /// Latent optimization steps.
    pub steps: usize,
    pub step_size: f64,
    pub decoder_depth: usize,
    pub decoder_epochs: usize,
    pub decoder_lr: f64,
    pub samples: usize,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            steps: 200,
            step_size: 1e-2,
            decoder_depth: 2,
            decoder_epochs: 10,
            decoder_lr: 1e-3,
            samples: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub clap: ClapConfig,
    pub facilitator: FacilitatorConfig,
    pub ar: ArConfig,
    pub diffusion: DiffusionConfig,
    pub edit: EditConfig,
}

impl RunConfig {
    /// Dimensions and learning rates of the full-scale setup. Far too slow
    /// and too small a learning rate for desk-scale training; kept for
    /// reference runs.
    pub fn full_scale() -> Self {
        let mut c = RunConfig::default();
        c.model.d_latent = 256;
        c.clap.epochs = 10;
        c.clap.lr_text = 1e-5;
        c.clap.lr_protein = 1e-5;
        c.facilitator.lr = 1e-6;
        c
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.d_model == 0 || m.d_latent == 0 || m.depth == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !m.d_model.is_multiple_of(m.heads.max(1)) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                m.d_model, m.heads
            )));
        }
        if self.clap.temperature < 0.0 {
            return Err(Error::Config("temperature must be >= 0".into()));
        }
        if self.clap.batch_size < 2 {
            return Err(Error::Config(
                "contrastive batch size must be at least 2".into(),
            ));
        }
        if self.diffusion.steps == 0 {
            return Err(Error::Config("diffusion needs at least one step".into()));
        }
        if self.diffusion.length == 0 || self.diffusion.length > m.max_protein_len {
            return Err(Error::Config(
                "diffusion length must be in 1..=max_protein_len".into(),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_hash() {
        let c = RunConfig::default();
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
        let mut d = c.clone();
        d.seed = 7;
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c = RunConfig::from_json(r#"{"seed": 3, "clap": {"loss": "ebm_nce"}}"#).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.clap.loss, ContrastiveLoss::EbmNce);
        assert_eq!(c.model.d_model, 64);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::from_json(r#"{"sed": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"clap": {"temperature": -1}}"#).is_err());
    }

    #[test]
    fn full_scale_head_width() {
        assert_eq!(RunConfig::full_scale().model.d_latent, 256);
    }
}
