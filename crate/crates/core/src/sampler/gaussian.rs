//! Closed-form moment recursion of the unadjusted Langevin chain on a
//! quadratic potential.
//!
//! For `D(x) = −c|x|²/2` the update `x' = (1 − εc/2)·x + s√ε·ω` maps an
//! isotropic Gaussian law to another isotropic Gaussian, so the chain's
//! marginal law and its KL divergence to the stationary law can be tracked
//! exactly without sampling.

/// `N(mean, var·I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoGaussian {
    pub mean: Vec<f64>,
    pub var: f64,
}

impl IsoGaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// One unadjusted Langevin transition applied to the law `g`.
pub fn ula_quadratic_step(g: &IsoGaussian, eps: f64, curvature: f64, noise: f64) -> IsoGaussian {
    let a = 1.0 - 0.5 * eps * curvature;
    IsoGaussian {
        mean: g.mean.iter().map(|m| a * m).collect(),
        var: a * a * g.var + noise * noise * eps,
    }
}

/// Fixed point of [`ula_quadratic_step`]: variance `s²ε/(1 − a²)`.
///
/// With `c = 1, s = 1` this is `1/(1 − ε/4)`.
pub fn ula_quadratic_stationary(dim: usize, eps: f64, curvature: f64, noise: f64) -> IsoGaussian {
    let a = 1.0 - 0.5 * eps * curvature;
    IsoGaussian {
        mean: vec![0.0; dim],
        var: noise * noise * eps / (1.0 - a * a),
    }
}

/// `KL(p ‖ q)` for isotropic Gaussians of equal dimension.
pub fn kl_iso(p: &IsoGaussian, q: &IsoGaussian) -> f64 {
    let d = p.dim() as f64;
    let dist2: f64 = p.mean.iter().zip(&q.mean).map(|(a, b)| (a - b).powi(2)).sum();
    0.5 * (d * p.var / q.var + dist2 / q.var - d + d * (q.var / p.var).ln())
}

/// `KL(q_t ‖ stationary)` for `t = 0..=steps`.
pub fn ula_kl_trajectory(init: &IsoGaussian, eps: f64, curvature: f64, noise: f64, steps: usize) -> Vec<f64> {
    let target = ula_quadratic_stationary(init.dim(), eps, curvature, noise);
    let mut law = init.clone();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(kl_iso(&law, &target));
    for _ in 0..steps {
        law = ula_quadratic_step(&law, eps, curvature, noise);
        out.push(kl_iso(&law, &target));
    }
    out
}
