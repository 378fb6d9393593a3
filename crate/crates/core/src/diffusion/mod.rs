//! Absorbing-state discrete diffusion over protein tokens.

mod network;
mod sampling;
mod schedule;

pub use network::{
    diffusion_loss, train_diffusion, ConditionedNetwork, DiffusionTrace, TransitionNetwork,
};
pub use sampling::{
    forward_corrupt, forward_trajectory, sample, sample_simplified, sample_weighted, Denoiser,
    SampleTrace, SamplerKind,
};
pub use schedule::Schedule;
