//! Discriminator optimal transport: the gradient-search baseline.

use crate::numcore::Tensor;

use super::potential::Potential;
use super::SamplerError;

/// Gradient descent on `|p − y|₂ − D(p)` for every row, starting at `x`.
///
/// `anchor` supplies `y`; when absent each row is anchored at its own
/// starting point. The distance term uses the zero subgradient at `p = y`.
pub fn dot_refine<P: Potential + ?Sized>(
    critic: &P,
    x: &Tensor,
    anchor: Option<&Tensor>,
    eps: f64,
    steps: usize,
) -> Result<Tensor, SamplerError> {
    let anchor = anchor.unwrap_or(x);
    if anchor.shape() != x.shape() {
        return Err(SamplerError::Dim {
            expected: x.cols(),
            got: anchor.shape().to_vec(),
        });
    }
    let mut p = x.clone();
    if eps == 0.0 {
        return Ok(p);
    }
    for _ in 0..steps {
        let g = dot_gradient(critic, &p, anchor)?;
        p.axpy(-eps, &g);
    }
    Ok(p)
}

/// `∇_p (|p − y|₂ − D(p))` per row.
pub fn dot_gradient<P: Potential + ?Sized>(critic: &P, p: &Tensor, anchor: &Tensor) -> Result<Tensor, SamplerError> {
    let (_, dgrad) = critic.values_and_grads(p)?;
    let cols = p.cols();
    let mut out = dgrad.scale(-1.0);
    for i in 0..p.rows() {
        let diff: Vec<f64> = p.row(i).iter().zip(anchor.row(i)).map(|(a, b)| a - b).collect();
        let r = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
        if r > 0.0 {
            for (o, d) in out.data_mut()[i * cols..(i + 1) * cols].iter_mut().zip(&diff) {
                *o += d / r;
            }
        }
    }
    Ok(out)
}
