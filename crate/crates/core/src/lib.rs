//! Text-conditioned protein sequence design at desk scale: contrastive
//! text/protein alignment, a facilitator regression between the two
//! representation spaces, autoregressive and absorbing-state diffusion
//! decoders, latent editing and the matching evaluation protocols, all on a
//! small reverse-mode autodiff engine.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clap;
pub mod config;
pub mod data;
pub mod decoder_ar;
pub mod diffusion;
pub mod editing;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod facilitator;
pub mod generator;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod report;
pub mod scalar;
pub mod tensor;
pub mod tokenizer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// The engine at the precision every model in this crate uses.
pub type Tensor = tensor::Tensor<f64>;
pub type AdamW = optim::AdamW<f64>;
pub type Schedule = diffusion::Schedule<f64>;
