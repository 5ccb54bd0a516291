//! Critic training, contrastive-divergence fine-tuning and Langevin sampling
//! on 2D Gaussian mixtures.

pub mod dcd;
pub mod eval;
pub mod nn;
pub mod numcore;
pub mod sampler;
pub mod synth;
pub mod wgan;
