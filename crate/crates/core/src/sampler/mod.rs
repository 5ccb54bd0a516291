//! MCMC over a critic read as an unnormalized log-density.
//!
//! Every chain here ascends the potential: a point moves towards higher
//! `D`, and the stationary law of the unadjusted chain is `∝ exp(D / s²)`
//! for noise multiplier `s` (up to discretization bias).

mod dot;
mod gaussian;
mod langevin;
mod potential;

pub use dot::{dot_gradient, dot_refine};
pub use gaussian::{kl_iso, ula_kl_trajectory, ula_quadratic_stationary, ula_quadratic_step, IsoGaussian};
pub use langevin::{langevin_step, mala_log_acceptance, mala_step, run_chain, ChainState, LangevinConfig, Space};
pub use potential::{Constant, Latent, Linear, Potential, Quadratic};

use thiserror::Error;

use crate::nn::NnError;
use crate::numcore::{NumError, Tensor};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("expected input of shape [batch, {expected}], got {got:?}")]
    Dim { expected: usize, got: Vec<usize> },
    #[error("chain produced a non-finite state at step {step}")]
    NonFinite { step: usize, last_finite: Tensor },
    #[error("latent-space chains need a generator")]
    MissingGenerator,
    #[error("invalid chain config: {0}")]
    Config(String),
}

impl From<NumError> for SamplerError {
    fn from(e: NumError) -> Self {
        SamplerError::Nn(NnError::Num(e))
    }
}
