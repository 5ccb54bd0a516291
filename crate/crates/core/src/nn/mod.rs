//! Generator and critic networks, spectral normalization, Adam.
//!
//! Both networks are four-layer ReLU MLPs over 2D inputs. The critic keeps
//! one [`PowerState`] per layer so that spectral normalization can reuse its
//! singular-vector estimates across training steps.

mod adam;
mod mlp;
mod spectral;

pub use adam::{Adam, AdamConfig, Direction};
pub use mlp::{Linear, Mlp, MlpTrace};
pub use spectral::{spectral_norm, PowerState};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{NumError, Rng, Tape, Tensor};

pub const DEFAULT_HIDDEN: usize = 128;
pub const DATA_DIM: usize = 2;
pub const LATENT_DIM: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("expected input of shape [batch, {expected}], got {got:?}")]
    InputDim { expected: usize, got: Vec<usize> },
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("non-finite gradient for {param}")]
    NonFiniteGradient { param: String },
    #[error("gradient for {param} has shape {grad_shape:?}, parameter has {param_shape:?}")]
    GradientShape {
        param: String,
        param_shape: Vec<usize>,
        grad_shape: Vec<usize>,
    },
    #[error("{grads} gradients supplied for {params} parameters")]
    GradientCount { params: usize, grads: usize },
}

fn rename_param(err: NnError) -> NnError {
    let rename = |p: &str| {
        p.strip_prefix("param[")
            .and_then(|s| s.strip_suffix(']'))
            .and_then(|s| s.parse::<usize>().ok())
            .map(Mlp::param_name)
            .unwrap_or_else(|| p.to_string())
    };
    match err {
        NnError::NonFiniteGradient { param } => NnError::NonFiniteGradient { param: rename(&param) },
        NnError::GradientShape {
            param,
            param_shape,
            grad_shape,
        } => NnError::GradientShape {
            param: rename(&param),
            param_shape,
            grad_shape,
        },
        other => other,
    }
}

fn apply_adam(mlp: &mut Mlp, adam: &mut Adam, grads: &[Tensor], dir: Direction) -> Result<(), NnError> {
    let mut params = mlp.params_mut();
    adam.step(&mut params, grads, dir).map_err(rename_param)
}

/// Latent-to-sample network `G: R² → R²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpGenerator {
    mlp: Mlp,
}

impl MlpGenerator {
    pub fn new(hidden: usize, rng: &mut Rng) -> Self {
        Self {
            mlp: Mlp::new(&[LATENT_DIM, hidden, hidden, hidden, DATA_DIM], rng),
        }
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self, NnError> {
        if mlp.input_dim() != LATENT_DIM || mlp.output_dim() != DATA_DIM {
            return Err(NnError::Architecture(format!(
                "generator must map {LATENT_DIM} -> {DATA_DIM}, got dims {:?}",
                mlp.dims()
            )));
        }
        Ok(Self { mlp })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn generate(&self, z: &Tensor) -> Result<Tensor, NnError> {
        self.mlp.forward(z)
    }

    pub fn adam_step(&mut self, adam: &mut Adam, grads: &[Tensor], dir: Direction) -> Result<(), NnError> {
        apply_adam(&mut self.mlp, adam, grads, dir)
    }
}

/// Scalar critic `D: R² → R` with per-layer spectral-normalization state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCritic {
    mlp: Mlp,
    power: Vec<PowerState>,
}

impl MlpCritic {
    /// Fresh critic, spectrally normalized with 50 power iterations.
    pub fn new(hidden: usize, rng: &mut Rng) -> Self {
        let mlp = Mlp::new(&[DATA_DIM, hidden, hidden, hidden, 1], rng);
        let mut critic = Self::with_random_power(mlp, rng);
        critic.spectral_normalize(50);
        critic
    }

    fn with_random_power(mlp: Mlp, rng: &mut Rng) -> Self {
        let power = mlp
            .layers()
            .iter()
            .map(|l| PowerState::random(l.fan_in(), l.fan_out(), rng))
            .collect();
        Self { mlp, power }
    }

    /// Wraps explicit weights without normalizing them.
    pub fn from_mlp(mlp: Mlp, rng: &mut Rng) -> Result<Self, NnError> {
        if mlp.output_dim() != 1 {
            return Err(NnError::Architecture(format!(
                "critic must have scalar output, got dims {:?}",
                mlp.dims()
            )));
        }
        Ok(Self::with_random_power(mlp, rng))
    }

    /// Wraps explicit weights and persisted power-iteration vectors.
    pub fn from_parts(mlp: Mlp, power: Vec<PowerState>) -> Result<Self, NnError> {
        if mlp.output_dim() != 1 {
            return Err(NnError::Architecture("critic must have scalar output".into()));
        }
        if power.len() != mlp.layers().len()
            || power
                .iter()
                .zip(mlp.layers())
                .any(|(p, l)| p.u.len() != l.fan_in() || p.v.len() != l.fan_out())
        {
            return Err(NnError::Architecture(
                "power-iteration vectors do not match layer shapes".into(),
            ));
        }
        Ok(Self { mlp, power })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn power_states(&self) -> &[PowerState] {
        &self.power
    }

    /// `D(x)` per row of `x: [batch, 2]`.
    pub fn value(&self, x: &Tensor) -> Result<Vec<f64>, NnError> {
        Ok(self.mlp.forward(x)?.into_data())
    }

    /// `∂D/∂x` per row.
    pub fn input_grad(&self, x: &Tensor) -> Result<Tensor, NnError> {
        Ok(self.value_and_input_grad(x)?.1)
    }

    pub fn value_and_input_grad(&self, x: &Tensor) -> Result<(Vec<f64>, Tensor), NnError> {
        let mut tape = Tape::new();
        let input = tape.leaf(x.clone());
        let trace = self.mlp.record(&mut tape, input, false)?;
        let values = tape.value(trace.output).data().to_vec();
        let seed = Tensor::filled(&[x.rows(), 1], 1.0);
        let mut grads = tape.backward(trace.output, &seed)?;
        Ok((values, grads.take(input)))
    }

    /// Divides every weight (not bias) by its power-iteration spectral-norm
    /// estimate, continuing from the persisted vectors.
    pub fn spectral_normalize(&mut self, power_iters: usize) {
        assert!(power_iters >= 1, "power_iters must be at least 1");
        for (layer, state) in self.mlp.layers_mut().iter_mut().zip(&mut self.power) {
            let sigma = state.iterate(&layer.weight, power_iters);
            if sigma > 0.0 {
                layer.weight = layer.weight.scale(1.0 / sigma);
            }
        }
    }

    /// Advances the persisted power-iteration vectors without touching the
    /// weights; returns the refreshed per-layer estimates.
    pub fn refine_power_states(&mut self, power_iters: usize) -> Vec<f64> {
        self.mlp
            .layers()
            .iter()
            .zip(&mut self.power)
            .map(|(layer, state)| state.iterate(&layer.weight, power_iters))
            .collect()
    }

    /// Current per-layer estimates `uᵀWv`, without iterating.
    pub fn sigma_estimates(&self) -> Vec<f64> {
        self.mlp
            .layers()
            .iter()
            .zip(&self.power)
            .map(|(l, p)| p.current_estimate(&l.weight))
            .collect()
    }

    /// Product of per-layer spectral norms from a fresh long power
    /// iteration; an upper bound on the critic's Lipschitz constant.
    pub fn lipschitz_bound(&self, iters: usize) -> f64 {
        self.mlp
            .layers()
            .iter()
            .map(|l| spectral_norm(&l.weight, iters))
            .product()
    }

    pub fn adam_step(&mut self, adam: &mut Adam, grads: &[Tensor], dir: Direction) -> Result<(), NnError> {
        apply_adam(&mut self.mlp, adam, grads, dir)
    }
}
