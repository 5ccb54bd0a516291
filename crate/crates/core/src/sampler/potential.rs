//! Scalar fields that chains can follow: the density is `∝ exp(value)`.

use crate::nn::{MlpCritic, MlpGenerator};
use crate::numcore::{Tape, Tensor};
use crate::synth::MixtureSpec;

use super::SamplerError;

/// Log-unnormalized density over `[batch, dim]` inputs.
pub trait Potential {
    fn dim(&self) -> usize;

    fn values(&self, x: &Tensor) -> Result<Vec<f64>, SamplerError> {
        Ok(self.values_and_grads(x)?.0)
    }

    /// Values and `∇ₓ value` per row.
    fn values_and_grads(&self, x: &Tensor) -> Result<(Vec<f64>, Tensor), SamplerError>;
}

fn check_dim(x: &Tensor, dim: usize) -> Result<(), SamplerError> {
    if x.shape().len() != 2 || x.cols() != dim {
        return Err(SamplerError::Dim {
            expected: dim,
            got: x.shape().to_vec(),
        });
    }
    Ok(())
}

impl Potential for MlpCritic {
    fn dim(&self) -> usize {
        self.mlp().input_dim()
    }

    fn values(&self, x: &Tensor) -> Result<Vec<f64>, SamplerError> {
        Ok(self.value(x)?)
    }

    fn values_and_grads(&self, x: &Tensor) -> Result<(Vec<f64>, Tensor), SamplerError> {
        Ok(self.value_and_input_grad(x)?)
    }
}

/// The exact mixture log-density.
impl Potential for MixtureSpec {
    fn dim(&self) -> usize {
        2
    }

    fn values(&self, x: &Tensor) -> Result<Vec<f64>, SamplerError> {
        check_dim(x, 2)?;
        Ok((0..x.rows())
            .map(|i| self.log_density([x.get(i, 0), x.get(i, 1)]))
            .collect())
    }

    fn values_and_grads(&self, x: &Tensor) -> Result<(Vec<f64>, Tensor), SamplerError> {
        let v = self.values(x)?;
        let g = (0..x.rows())
            .flat_map(|i| self.score([x.get(i, 0), x.get(i, 1)]))
            .collect();
        Ok((v, Tensor::matrix(x.rows(), 2, g)?))
    }
}

/// `D(x) = c`.
#[derive(Debug, Clone, Copy)]
pub struct Constant {
    pub value: f64,
    pub dim: usize,
}

impl Potential for Constant {
    fn dim(&self) -> usize {
        self.dim
    }

    fn values_and_grads(&self, x: &Tensor) -> Result<(Vec<f64>, Tensor), SamplerError> {
        check_dim(x, self.dim)?;
        Ok((vec![self.value; x.rows()], Tensor::zeros(x.shape())))
    }
}

/// `D(x) = w·x + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl Potential for Linear {
    fn dim(&self) -> usize {
        self.weight.len()
    }

    fn values_and_grads(&self, x: &Tensor) -> Result<(Vec<f64>, Tensor), SamplerError> {
        check_dim(x, self.dim())?;
        let v = (0..x.rows())
            .map(|i| self.bias + x.row(i).iter().zip(&self.weight).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let g = self.weight.repeat(x.rows());
        Ok((v, Tensor::matrix(x.rows(), self.dim(), g)?))
    }
}

/// `D(x) = −c·|x|²/2`: a centred Gaussian with variance `1/c` per coordinate.
#[derive(Debug, Clone, Copy)]
pub struct Quadratic {
    pub curvature: f64,
    pub dim: usize,
}

impl Quadratic {
    pub fn standard(dim: usize) -> Self {
        Self { curvature: 1.0, dim }
    }
}

impl Potential for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn values_and_grads(&self, x: &Tensor) -> Result<(Vec<f64>, Tensor), SamplerError> {
        check_dim(x, self.dim)?;
        let v = (0..x.rows())
            .map(|i| -0.5 * self.curvature * x.row(i).iter().map(|a| a * a).sum::<f64>())
            .collect();
        Ok((v, x.scale(-self.curvature)))
    }
}

/// `z ↦ D(G(z))`, differentiated through the generator with frozen weights.
pub struct Latent<'a, P: Potential + ?Sized> {
    pub generator: &'a MlpGenerator,
    pub critic: &'a P,
}

impl<P: Potential + ?Sized> Latent<'_, P> {
    /// Values, latent gradients and the decoded points `G(z)`.
    pub fn evaluate(&self, z: &Tensor) -> Result<(Vec<f64>, Tensor, Tensor), SamplerError> {
        let mut tape = Tape::new();
        let zv = tape.leaf(z.clone());
        let g = self.generator.mlp().record(&mut tape, zv, false)?;
        let x = tape.value(g.output).clone();
        let (values, grad_x) = self.critic.values_and_grads(&x)?;
        let mut grads = tape.backward(g.output, &grad_x)?;
        Ok((values, grads.take(zv), x))
    }
}

impl<P: Potential + ?Sized> Potential for Latent<'_, P> {
    fn dim(&self) -> usize {
        self.generator.mlp().input_dim()
    }

    fn values(&self, z: &Tensor) -> Result<Vec<f64>, SamplerError> {
        let x = self.generator.generate(z)?;
        self.critic.values(&x)
    }

    fn values_and_grads(&self, z: &Tensor) -> Result<(Vec<f64>, Tensor), SamplerError> {
        let (v, g, _) = self.evaluate(z)?;
        Ok((v, g))
    }
}
